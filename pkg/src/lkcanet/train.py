"""Optimizer, learning-rate schedule, baseline training loop, and the
teacher -> student feature-alignment distillation loop.

Plain training is distillation with the alignment term switched off: both
run the same engine, so an alpha = 0 distillation reproduces training
bit-exactly under the same seed. Runs are deterministic given (seed, single
worker); logs are one JSON-compatible dict per epoch with keys
{epoch, lr, D, loss_h, loss_kd, val_mpsnr}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import backward, no_grad
from .hsi import HsiCube, degrade
from .losses import DecaySchedule, LossWeights, h_loss, kd_loss, total_loss
from .metrics import MetricResult, average_metrics, evaluate_metrics, mpsnr
from .model import LkcaNet


class NonFiniteGradientError(RuntimeError):
    """A parameter received a NaN/Inf gradient."""


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 8
    seed: int = 0
    initial_lr: float = 2e-3
    final_lr: float = 2e-4
    schedule: str = "cosine"  # or "step"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float | None = None
    deterministic: bool = True

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.final_lr > self.initial_lr:
            raise ValueError(
                f"final_lr {self.final_lr} must not exceed initial_lr {self.initial_lr}"
            )
        if self.schedule not in ("cosine", "step"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass
class DistillConfig:
    """Feature-alignment settings. ``kd_target`` picks the alignment tensor:
    the post-pixel-shuffle feature maps (default) or the full reconstruction."""

    weights: LossWeights = field(default_factory=LossWeights)
    decay: DecaySchedule = field(default_factory=DecaySchedule)
    kd_target: str = "post_shuffle"  # or "reconstruction"

    def __post_init__(self):
        if self.kd_target not in ("post_shuffle", "reconstruction"):
            raise ValueError(f"unknown kd_target {self.kd_target!r}")


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(
    params: dict,
    state: AdamState,
    lr: float,
    *,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    grad_clip: float | None = None,
) -> None:
    """One bias-corrected adaptive-moment update over a parameter dict.

    Parameters without a gradient are left untouched (their moments do not
    advance either). Raises on non-finite gradients, naming the parameter.
    """
    grads = {}
    for name, p in params.items():
        if p.grad is None:
            continue
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
        grads[name] = p.grad
    if not grads:
        return

    if grad_clip is not None:
        total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if total > grad_clip:
            factor = grad_clip / (total + 1e-12)
            grads = {k: g * factor for k, g in grads.items()}

    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.value)
            v = np.zeros_like(p.value)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        mhat = m / bc1
        vhat = v / bc2
        p.value = p.value - (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.value.dtype)


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for an epoch: cosine (default) or stepwise decay from
    initial_lr down to final_lr across the configured epochs."""
    if cfg.epochs <= 1:
        return cfg.initial_lr
    frac = epoch / (cfg.epochs - 1)
    if cfg.schedule == "cosine":
        return cfg.final_lr + 0.5 * (cfg.initial_lr - cfg.final_lr) * (1.0 + math.cos(math.pi * frac))
    # step: decade-style interpolation in log space over 4 plateaus
    plateau = min(int(frac * 4), 3)
    ratio = (cfg.final_lr / cfg.initial_lr) ** (plateau / 3)
    return cfg.initial_lr * ratio


# ---------------------------------------------------------------------------
# Training engine
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: LkcaNet
    history: list[dict]
    best_epoch: int | None
    best_val_mpsnr: float | None
    diverged: bool = False


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _snapshot(model: LkcaNet) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in model.state_arrays().items()}


def _validate_mpsnr(model: LkcaNet, patches) -> float | None:
    if not patches:
        return None
    vals = []
    for pair in patches:
        sr = model.predict(pair.lr[None])
        vals.append(mpsnr(sr[0], pair.hr))
    return float(np.mean(vals))


def _fit(
    model: LkcaNet,
    split,
    cfg: TrainConfig,
    teacher: LkcaNet | None,
    dcfg: DistillConfig,
) -> TrainResult:
    if not split.train:
        raise ValueError("training split is empty")
    rng = np.random.default_rng(cfg.seed)
    weights = dcfg.weights
    history: list[dict] = []
    best: tuple[int | None, float | None, dict | None] = (None, None, None)
    last_good = _snapshot(model)
    state = AdamState()
    n = len(split.train)

    for epoch in range(cfg.epochs):
        lr = lr_at(cfg, epoch)
        decay = dcfg.decay.at(epoch)
        coeff = decay * weights.alpha if teacher is not None else 0.0
        order = rng.permutation(n)
        h_vals: list[float] = []
        kd_vals: list[float] = []
        diverged = False

        for batch in _batches(n, cfg.batch_size, order):
            xs = np.stack([split.train[i].lr for i in batch])
            ys = np.stack([split.train[i].hr for i in batch])
            i_sr, f_up = model.forward(xs, training=True, rng=rng)
            h = h_loss(i_sr, ys, weights)
            if coeff != 0.0:
                with no_grad():
                    t_sr, t_up = teacher.forward(xs)
                target = t_up if dcfg.kd_target == "post_shuffle" else t_sr
                student = f_up if dcfg.kd_target == "post_shuffle" else i_sr
                kd = kd_loss(student, target, weights)
                loss = total_loss(kd, h, decay, weights.alpha)
                kd_vals.append(float(kd.value))
            else:
                loss = h
                kd_vals.append(0.0)
            h_vals.append(float(h.value))

            if not np.isfinite(loss.value):
                diverged = True
                break
            model.zero_grad()
            backward(loss)
            adam_step(
                model.params,
                state,
                lr,
                beta1=cfg.beta1,
                beta2=cfg.beta2,
                eps=cfg.eps,
                grad_clip=cfg.grad_clip,
            )

        if diverged:
            model.load_state(last_good)
            return TrainResult(model, history, best[0], best[1], diverged=True)

        val = _validate_mpsnr(model, split.val)
        history.append(
            {
                "epoch": epoch,
                "lr": lr,
                "D": decay,
                "loss_h": float(np.mean(h_vals)),
                "loss_kd": float(np.mean(kd_vals)),
                "val_mpsnr": val,
            }
        )
        last_good = _snapshot(model)
        if val is not None and (best[1] is None or val > best[1]):
            best = (epoch, val, _snapshot(model))

    if best[2] is not None:
        model.load_state(best[2])
    return TrainResult(model, history, best[0], best[1])


def train(model: LkcaNet, split, cfg: TrainConfig) -> TrainResult:
    """Minimize the supervised loss over the training patches.

    The best-validation parameters (by mean PSNR) are restored at the end;
    with zero epochs the model is returned unchanged.
    """
    return _fit(model, split, cfg, teacher=None, dcfg=DistillConfig())


def distill(
    teacher: LkcaNet,
    student: LkcaNet,
    split,
    cfg: TrainConfig,
    dcfg: DistillConfig = DistillConfig(),
) -> TrainResult:
    """Train the student against ground truth plus decaying teacher alignment.

    The teacher is frozen (evaluation mode, no gradients, parameters
    untouched). With ``weights.alpha == 0`` the run is bit-identical to
    :func:`train` under the same seed.
    """
    tc, sc = teacher.config, student.config
    if tc.num_blocks <= sc.num_blocks:
        raise ValueError(
            f"teacher must be deeper than the student, got {tc.num_blocks} <= {sc.num_blocks}"
        )
    if (tc.bands, tc.scale_factor, tc.feature_channels) != (
        sc.bands,
        sc.scale_factor,
        sc.feature_channels,
    ):
        raise ValueError(
            "teacher and student must share (bands, scale, channels) so the "
            "aligned feature maps match: "
            f"{(tc.bands, tc.scale_factor, tc.feature_channels)} vs "
            f"{(sc.bands, sc.scale_factor, sc.feature_channels)}"
        )
    return _fit(student, split, cfg, teacher=teacher, dcfg=dcfg)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _forward_tiled(model: LkcaNet, lr: np.ndarray, tile: int, margin: int) -> np.ndarray:
    """Overlap-and-crop tiling of a (B, H, W) low-resolution input.

    With a margin >= the model's receptive radius and input-independent
    attention gates this reproduces the untiled forward exactly; data-driven
    gates see tile-local pooling statistics, so outputs can differ slightly
    near tile joins.
    """
    b, h, w = lr.shape
    r = model.config.scale_factor
    out = np.zeros((b, h * r, w * r), dtype=lr.dtype)
    for y0 in range(0, h, tile):
        for x0 in range(0, w, tile):
            y1, x1 = min(y0 + tile, h), min(x0 + tile, w)
            yy0, xx0 = max(0, y0 - margin), max(0, x0 - margin)
            yy1, xx1 = min(h, y1 + margin), min(w, x1 + margin)
            sr = model.predict(lr[None, :, yy0:yy1, xx0:xx1])[0]
            crop = sr[
                :,
                (y0 - yy0) * r : (y1 - yy0) * r,
                (x0 - xx0) * r : (x1 - xx0) * r,
            ]
            out[:, y0 * r : y1 * r, x0 * r : x1 * r] = crop
    return out


def evaluate(
    model: LkcaNet | str,
    regions: list[HsiCube],
    r: int,
    tile: int | None = None,
    margin: int | None = None,
) -> tuple[MetricResult, list[MetricResult]]:
    """Score a model (or the "bicubic" baseline) over whole test regions.

    Each high-resolution region is bicubic-degraded by r, super-resolved,
    and compared against the original; the six metrics are averaged over
    regions. ``tile`` enables overlap-and-crop tiling for memory-bound
    inputs.

    Returns (averaged metrics, per-region metrics).
    """
    if not regions:
        raise ValueError("no test regions to evaluate")
    per_region = []
    for region in regions:
        if not isinstance(model, str) and region.bands != model.config.bands:
            raise ValueError(
                f"region has {region.bands} bands, model expects {model.config.bands}"
            )
        lr = degrade(region, r)
        if isinstance(model, str):
            if model != "bicubic":
                raise ValueError(f"unknown baseline {model!r}")
            from .hsi import bicubic_resize

            sr = bicubic_resize(lr, region.height, region.width).data
        elif tile is not None:
            m = margin if margin is not None else model.receptive_radius
            sr = _forward_tiled(model, lr.data, tile, m)
        else:
            sr = model.predict(lr.data[None])[0]
        per_region.append(evaluate_metrics(sr, region.data, r))
    return average_metrics(per_region), per_region
