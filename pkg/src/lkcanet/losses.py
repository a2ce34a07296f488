"""Training losses: reconstruction, spectral-angle, gradient, and cosine
alignment terms, their weighted combinations, and the distillation decay.

Every loss treats its second argument (ground truth or teacher output) as a
constant: gradients flow only into the first argument. Spectral angles use
the numerically stable half-angle form ``2 * atan2(|u - v|, |u + v|)`` on
normalized spectra so identical inputs yield exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Var, as_var, constant, record
from .ops import add, scale

_NORM_EPS = 1e-8


@dataclass(frozen=True)
class LossWeights:
    """Loss-term weights: lam1/lam2 scale the supervised spectral-angle and
    gradient terms, lam3/lam4/lam5 the distillation cosine/angle/gradient
    terms, alpha the initial distillation contribution."""

    lam1: float = 0.5
    lam2: float = 0.1
    lam3: float = 0.5
    lam4: float = 0.5
    lam5: float = 0.1
    alpha: float = 0.01

    def __post_init__(self):
        for name in ("lam1", "lam2", "lam3", "lam4", "lam5", "alpha"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class DecaySchedule:
    """Stepwise decay of the distillation weight: d ** floor(epoch / f)."""

    factor: float = 0.66
    every: int = 10

    def __post_init__(self):
        if not (0.0 < self.factor <= 1.0):
            raise ValueError(f"decay factor must lie in (0, 1], got {self.factor}")
        if self.every < 1:
            raise ValueError(f"decay frequency must be >= 1, got {self.every}")

    def at(self, epoch: int) -> float:
        if epoch < 0:
            raise ValueError(f"epoch must be >= 0, got {epoch}")
        return self.factor ** (epoch // self.every)


def _pair(pred, target) -> tuple[Var, np.ndarray]:
    p = as_var(pred)
    t = constant(target)
    if p.shape != t.shape:
        raise ValueError(f"loss arguments must share a shape, got {p.shape} vs {t.shape}")
    return p, t


def l1_loss(pred, target) -> Var:
    """Mean absolute error."""
    p, t = _pair(pred, target)
    diff = p.value - t
    n = diff.size
    sgn = np.sign(diff)
    return record(np.asarray(np.abs(diff).mean()), (p,), lambda g: (g * sgn / n,))


def _spectral_geometry(a: np.ndarray, b: np.ndarray):
    """Unit spectra, guarded norms, cosine, and zero-vector mask.

    Spectra run along axis 1 of (N, B, H, W) stacks. Norms below the guard
    leave the corresponding unit vector ~0 and flag the pixel.
    """
    na = np.sqrt((a * a).sum(axis=1, keepdims=True))
    nb = np.sqrt((b * b).sum(axis=1, keepdims=True))
    sa = np.maximum(na, _NORM_EPS)
    sb = np.maximum(nb, _NORM_EPS)
    u = a / sa
    v = b / sb
    degenerate = (na <= _NORM_EPS) | (nb <= _NORM_EPS)
    return u, v, sa, degenerate


def sam_loss(pred, target) -> Var:
    """Mean spectral angle (radians) between per-pixel band vectors."""
    p, t = _pair(pred, target)
    if p.value.ndim != 4:
        raise ValueError(f"expected (N, B, H, W) inputs, got shape {p.shape}")
    a = p.value
    u, v, sa, degenerate = _spectral_geometry(a, t)
    dq = np.sqrt(((u - v) ** 2).sum(axis=1, keepdims=True))
    dp = np.sqrt(((u + v) ** 2).sum(axis=1, keepdims=True))
    theta = 2.0 * np.arctan2(dq, dp)
    npix = theta.size
    val = np.asarray(theta.mean())

    cos = (u * v).sum(axis=1, keepdims=True)
    # d theta / d a = -(v - cos*u) / (|a| * sin); since |v - cos*u| = sin,
    # normalizing the residual keeps the magnitude at the exact bound 1/|a|
    # even for near-zero angles (where the direction is a subgradient choice).
    resid = v - cos * u
    rnorm = np.sqrt((resid * resid).sum(axis=1, keepdims=True))
    direction = np.where(rnorm > 1e-12, resid / np.maximum(rnorm, 1e-300), 0.0)

    def vjp(g):
        ga = np.where(degenerate, 0.0, -direction / sa)
        return ((g / npix) * ga,)

    return record(val, (p,), vjp)


def cos_loss(pred, target) -> Var:
    """One minus the mean per-pixel cosine similarity of spectral vectors.

    Zero-norm spectra contribute similarity 0 (guarded denominator).
    """
    p, t = _pair(pred, target)
    if p.value.ndim != 4:
        raise ValueError(f"expected (N, B, H, W) inputs, got shape {p.shape}")
    a = p.value
    u, v, sa, degenerate = _spectral_geometry(a, t)
    # 1 - |u - v|^2 / 2 equals <u, v> for unit vectors but is exactly 1.0
    # when the inputs are identical.
    cos = 1.0 - 0.5 * ((u - v) ** 2).sum(axis=1, keepdims=True)
    cos = np.where(degenerate, 0.0, cos)
    npix = cos.size
    val = np.asarray(1.0 - cos.mean())

    def vjp(g):
        # d cos / d a = (v - cos * u) / |a|
        ga = (v - cos * u) / sa
        ga = np.where(degenerate, 0.0, ga)
        return (-(g / npix) * ga,)

    return record(val, (p,), vjp)


def grad_loss(pred, target) -> Var:
    """Mean absolute difference of forward-difference spatial gradients,
    pooled over both axes and all bands."""
    p, t = _pair(pred, target)
    if p.value.ndim != 4:
        raise ValueError(f"expected (N, B, H, W) inputs, got shape {p.shape}")
    a = p.value
    ry = (a[:, :, 1:, :] - a[:, :, :-1, :]) - (t[:, :, 1:, :] - t[:, :, :-1, :])
    rx = (a[:, :, :, 1:] - a[:, :, :, :-1]) - (t[:, :, :, 1:] - t[:, :, :, :-1])
    n = ry.size + rx.size
    val = np.asarray((np.abs(ry).sum() + np.abs(rx).sum()) / n)
    sy = np.sign(ry)
    sx = np.sign(rx)

    def vjp(g):
        ga = np.zeros_like(a)
        gy = g * sy / n
        gx = g * sx / n
        ga[:, :, 1:, :] += gy
        ga[:, :, :-1, :] -= gy
        ga[:, :, :, 1:] += gx
        ga[:, :, :, :-1] -= gx
        return (ga,)

    return record(val, (p,), vjp)


def h_loss(pred, target, weights: LossWeights = LossWeights()) -> Var:
    """Supervised loss: L1 + lam1 * angle + lam2 * gradient."""
    total = l1_loss(pred, target)
    if weights.lam1 != 0.0:
        total = add(total, scale(sam_loss(pred, target), weights.lam1))
    if weights.lam2 != 0.0:
        total = add(total, scale(grad_loss(pred, target), weights.lam2))
    return total


def kd_loss(student_features, teacher_features, weights: LossWeights = LossWeights()) -> Var:
    """Feature-alignment loss on post-pixel-shuffle maps:
    lam3 * cosine + lam4 * angle + lam5 * gradient. The teacher side is a
    constant (no gradient flows into it)."""
    total = scale(cos_loss(student_features, teacher_features), weights.lam3)
    total = add(total, scale(sam_loss(student_features, teacher_features), weights.lam4))
    total = add(total, scale(grad_loss(student_features, teacher_features), weights.lam5))
    return total


def total_loss(kd: Var, h: Var, decay: float, alpha: float) -> Var:
    """Combined objective: decay * alpha * kd + h."""
    coeff = decay * alpha
    if coeff == 0.0:
        return h
    return add(scale(kd, coeff), h)
