"""Differentiable primitives: convolutions, normalization, activations,
pixel shuffle, channel attention, and a finite-difference gradient checker.

Tensors follow the (N, C, H, W) layout. Convolutions are stride-1
cross-correlations with "same" zero padding; dilation and channel groups are
supported, odd kernels only. Every primitive carries an analytic backward
that the checker validates against central finite differences.

Reductions use numpy's deterministic summation order, so repeated runs on
the same machine are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .autodiff import Var, as_var, backward, no_grad, record

_SQRT1_2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a: Var, b: Var) -> Var:
    a, b = as_var(a), as_var(b)
    if a.shape != b.shape:
        raise ValueError(f"add requires equal shapes, got {a.shape} vs {b.shape}")
    return record(a.value + b.value, (a, b), lambda g: (g, g))


def add_const(a: Var, c: np.ndarray) -> Var:
    a = as_var(a)
    return record(a.value + c, (a,), lambda g: (g,))


def mul(a: Var, b: Var) -> Var:
    a, b = as_var(a), as_var(b)
    if a.shape != b.shape:
        raise ValueError(f"mul requires equal shapes, got {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    return record(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Var, k: float) -> Var:
    a = as_var(a)
    return record(a.value * k, (a,), lambda g: (g * k,))


def project_scalar(a: Var, weights: np.ndarray) -> Var:
    """Weighted sum reducing a tensor to a scalar: sum(a * weights)."""
    a = as_var(a)
    w = np.asarray(weights)
    return record(np.asarray((a.value * w).sum()), (a,), lambda g: (g * w,))


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------


def _conv_geometry(x_shape, w_shape, dilation: int, groups: int):
    if len(x_shape) != 4 or len(w_shape) != 4:
        raise ValueError("conv2d expects x:(N,C,H,W) and weight:(Cout,Cin/g,k,k)")
    n, cin, h, w = x_shape
    cout, cin_g, kh, kw = w_shape
    if kh != kw:
        raise ValueError(f"conv2d kernels must be square, got {kh}x{kw}")
    if kh % 2 == 0:
        raise ValueError(f"even kernel size {kh} is incompatible with 'same' padding")
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    if groups < 1 or cin % groups or cout % groups:
        raise ValueError(f"groups={groups} must divide in={cin} and out={cout} channels")
    if cin_g != cin // groups:
        raise ValueError(
            f"weight expects {cin_g} channels per group but input provides {cin // groups}"
        )
    pad = (kh - 1) * dilation // 2
    return n, cin, h, w, cout, cin_g, kh, pad


def _im2col(x: np.ndarray, k: int, dilation: int, groups: int, pad: int) -> np.ndarray:
    """Gather conv taps: (N, C, H, W) -> (N, g, (C/g)*k*k, H*W)."""
    n, cin, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, groups, cin // groups, k, k, h, w), dtype=x.dtype)
    xg = xp.reshape(n, groups, cin // groups, h + 2 * pad, w + 2 * pad)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j] = xg[
                :, :, :, i * dilation : i * dilation + h, j * dilation : j * dilation + w
            ]
    return cols.reshape(n, groups, (cin // groups) * k * k, h * w)


def _col2im(cols: np.ndarray, x_shape, k: int, dilation: int, groups: int, pad: int) -> np.ndarray:
    """Scatter-add the transpose of :func:`_im2col`."""
    n, cin, h, w = x_shape
    xp = np.zeros((n, cin, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    xg = xp.reshape(n, groups, cin // groups, h + 2 * pad, w + 2 * pad)
    cols6 = cols.reshape(n, groups, cin // groups, k, k, h, w)
    for i in range(k):
        for j in range(k):
            xg[:, :, :, i * dilation : i * dilation + h, j * dilation : j * dilation + w] += cols6[
                :, :, :, i, j
            ]
    if pad == 0:
        return xp
    return xp[:, :, pad : pad + h, pad : pad + w]


def conv2d(x: Var, weight: Var, bias: Var | None = None, *, dilation: int = 1, groups: int = 1) -> Var:
    """Stride-1 "same" cross-correlation with dilation and channel groups."""
    x, weight = as_var(x), as_var(weight)
    n, cin, h, w, cout, cin_g, k, pad = _conv_geometry(x.shape, weight.shape, dilation, groups)
    if bias is not None:
        bias = as_var(bias)
        if bias.shape != (cout,):
            raise ValueError(f"bias shape {bias.shape} != ({cout},)")

    cols = _im2col(x.value, k, dilation, groups, pad)  # (n, g, cg*k*k, h*w)
    wmat = weight.value.reshape(groups, cout // groups, cin_g * k * k)
    out = np.matmul(wmat, cols).reshape(n, cout, h, w)
    if bias is not None:
        out = out + bias.value[:, None, None]

    xv, wv = x.value, weight.value

    def vjp(g):
        go = g.reshape(n, groups, cout // groups, h * w)
        gw = np.matmul(go, cols.swapaxes(-1, -2)).sum(axis=0).reshape(wv.shape)
        gcols = np.matmul(wmat.swapaxes(-1, -2), go)
        gx = _col2im(gcols, xv.shape, k, dilation, groups, pad)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return record(out, parents, vjp)


# ---------------------------------------------------------------------------
# Normalization and activations
# ---------------------------------------------------------------------------


def layer_norm(x: Var, gamma: Var, beta: Var, eps: float = 1e-6) -> Var:
    """Per-position normalization over the channel axis with learned affine."""
    x, gamma, beta = as_var(x), as_var(gamma), as_var(beta)
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"gamma/beta must have shape ({c},)")
    mu = x.value.mean(axis=1, keepdims=True)
    var = x.value.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.value - mu) * inv
    out = gamma.value[:, None, None] * xhat + beta.value[:, None, None]

    gv = gamma.value

    def vjp(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        gh = g * gv[:, None, None]
        m1 = gh.mean(axis=1, keepdims=True)
        m2 = (gh * xhat).mean(axis=1, keepdims=True)
        gx = inv * (gh - m1 - xhat * m2)
        return gx, ggamma, gbeta

    return record(out, (x, gamma, beta), vjp)


def gelu(x: Var) -> Var:
    """Exact Gaussian-CDF GELU: x * Phi(x)."""
    x = as_var(x)
    xv = x.value
    phi = 0.5 * (1.0 + erf(xv * _SQRT1_2))
    out = xv * phi
    pdf = np.exp(-0.5 * xv * xv) * _INV_SQRT_2PI
    deriv = phi + xv * pdf
    return record(out, (x,), lambda g: (g * deriv,))


def relu(x: Var) -> Var:
    x = as_var(x)
    mask = x.value > 0
    return record(x.value * mask, (x,), lambda g: (g * mask,))


def sigmoid(x: Var) -> Var:
    x = as_var(x)
    xv = x.value
    # Two-sided form avoids overflow for large |x|.
    pos = xv >= 0
    z = np.exp(np.where(pos, -xv, xv))
    s = np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z))
    return record(s, (x,), lambda g: (g * s * (1.0 - s),))


# ---------------------------------------------------------------------------
# Pixel shuffle
# ---------------------------------------------------------------------------


def shuffle_array(arr: np.ndarray, r: int) -> np.ndarray:
    """(N, C*r*r, H, W) -> (N, C, H*r, W*r); out[n,c,y*r+i,x*r+j] = in[n,c*r*r+i*r+j,y,x]."""
    n, crr, h, w = arr.shape
    if r < 1 or crr % (r * r):
        raise ValueError(f"channel count {crr} not divisible by r^2 = {r * r}")
    c = crr // (r * r)
    return (
        arr.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * r, w * r)
    )


def unshuffle_array(arr: np.ndarray, r: int) -> np.ndarray:
    """Exact inverse of :func:`shuffle_array`."""
    n, c, hr, wr = arr.shape
    if r < 1 or hr % r or wr % r:
        raise ValueError(f"spatial extents {hr}x{wr} not divisible by r = {r}")
    h, w = hr // r, wr // r
    return (
        arr.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h, w)
    )


def pixel_shuffle(x: Var, r: int) -> Var:
    x = as_var(x)
    out = shuffle_array(x.value, r)
    return record(out, (x,), lambda g: (unshuffle_array(g, r),))


def pixel_unshuffle(x: Var, r: int) -> Var:
    x = as_var(x)
    out = unshuffle_array(x.value, r)
    return record(out, (x,), lambda g: (shuffle_array(g, r),))


# ---------------------------------------------------------------------------
# Pooling, linear, concat, gating
# ---------------------------------------------------------------------------


def global_avg_pool(x: Var) -> Var:
    """(N, C, H, W) -> (N, C) spatial mean."""
    x = as_var(x)
    n, c, h, w = x.shape
    out = x.value.mean(axis=(2, 3))

    def vjp(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), (n, c, h, w)).copy(),)

    return record(out, (x,), vjp)


def linear(x: Var, weight: Var, bias: Var) -> Var:
    """(N, F) x (G, F)^T + (G,) -> (N, G)."""
    x, weight, bias = as_var(x), as_var(weight), as_var(bias)
    if x.shape[1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise ValueError(
            f"linear shape mismatch: x {x.shape}, weight {weight.shape}, bias {bias.shape}"
        )
    out = x.value @ weight.value.T + bias.value
    xv, wv = x.value, weight.value

    def vjp(g):
        return g @ wv, g.T @ xv, g.sum(axis=0)

    return record(out, (x, weight, bias), vjp)


def concat_channels(parts: list[Var]) -> Var:
    parts = [as_var(p) for p in parts]
    sizes = [p.shape[1] for p in parts]
    out = np.concatenate([p.value for p in parts], axis=1)
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return record(out, tuple(parts), vjp)


def broadcast_gate(x: Var, gate: Var) -> Var:
    """Multiply (N, C, H, W) features by a per-channel (N, C) gate."""
    x, gate = as_var(x), as_var(gate)
    if gate.shape != x.shape[:2]:
        raise ValueError(f"gate shape {gate.shape} != {x.shape[:2]}")
    gv = gate.value[:, :, None, None]
    xv = x.value

    def vjp(g):
        return g * gv, (g * xv).sum(axis=(2, 3))

    return record(xv * gv, (x, gate), vjp)


def channel_attention(x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Var:
    """Squeeze-excitation gate: pool -> C/rho -> rectifier -> C -> sigmoid -> scale.

    Channel divisibility by the reduction is fixed by the weight shapes.
    """
    squeezed = global_avg_pool(x)
    hidden = relu(linear(squeezed, w1, b1))
    gate = sigmoid(linear(hidden, w2, b2))
    return broadcast_gate(x, gate)


def drop_path(x: Var, rate: float, rng: np.random.Generator | None, training: bool) -> Var:
    """Per-sample stochastic depth with inverse-probability rescaling."""
    if not (0.0 <= rate <= 1.0):
        raise ValueError(f"drop-path rate must lie in [0, 1], got {rate}")
    x = as_var(x)
    if not training or rate == 0.0:
        return x
    n = x.shape[0]
    if rate >= 1.0:
        keep = np.zeros(n, dtype=x.dtype)
    else:
        if rng is None:
            raise ValueError("drop_path in training mode requires an rng")
        keep = (rng.random(n) >= rate).astype(x.dtype) / np.asarray(1.0 - rate, dtype=x.dtype)
    m = keep[:, None, None, None]
    return record(x.value * m, (x,), lambda g: (g * m,))


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckFailure:
    input_name: str
    flat_index: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients against central differences."""

    op_name: str
    passed: bool
    max_rel_error: float
    tolerance: float
    failures: list[GradCheckFailure] = field(default_factory=list)

    def summary(self) -> str:
        status = "pass" if self.passed else "FAIL"
        lines = [
            f"grad_check[{self.op_name}]: {status} "
            f"(max rel err {self.max_rel_error:.3e}, tol {self.tolerance:.1e})"
        ]
        for f in self.failures:
            lines.append(
                f"  {self.op_name}/{f.input_name}[{f.flat_index}]: "
                f"analytic={f.analytic:.6e} numeric={f.numeric:.6e} rel={f.rel_error:.3e}"
            )
        return "\n".join(lines)


def grad_check(
    fn,
    inputs,
    *,
    eps: float = 1e-5,
    tolerance: float = 1e-6,
    op_name: str = "op",
    names: list[str] | None = None,
    projection_seed: int = 0,
    max_report: int = 8,
) -> GradCheckReport:
    """Compare ``fn``'s analytic gradients to central finite differences.

    ``fn`` maps one Var per input array to a Var; non-scalar outputs are
    reduced with a fixed random projection so a single scalar objective is
    differentiated. Inputs are widened to float64. The relative error per
    element is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    names = names or [f"arg{i}" for i in range(len(arrays))]
    proj: dict[tuple, np.ndarray] = {}

    def objective(arrs, want_vars=False):
        vs = [Var(a) for a in arrs]
        out = fn(*vs)
        if out.value.size != 1:
            key = out.value.shape
            if key not in proj:
                proj[key] = np.random.default_rng(projection_seed).standard_normal(key)
            out = project_scalar(out, proj[key])
        return (vs, out) if want_vars else float(out.value)

    vs, out = objective(arrays, want_vars=True)
    backward(out)
    analytic = [v.grad if v.grad is not None else np.zeros_like(v.value) for v in vs]

    max_rel = 0.0
    failures: list[GradCheckFailure] = []
    with no_grad():
        for a_idx, base in enumerate(arrays):
            flat = base.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + eps
                f_plus = objective(arrays)
                flat[j] = orig - eps
                f_minus = objective(arrays)
                flat[j] = orig
                numeric = (f_plus - f_minus) / (2.0 * eps)
                ana = float(analytic[a_idx].reshape(-1)[j])
                rel = abs(ana - numeric) / max(1.0, abs(numeric))
                if rel > max_rel:
                    max_rel = rel
                if rel > tolerance and len(failures) < max_report:
                    failures.append(GradCheckFailure(names[a_idx], j, ana, numeric, rel))

    return GradCheckReport(
        op_name=op_name,
        passed=max_rel <= tolerance,
        max_rel_error=max_rel,
        tolerance=tolerance,
        failures=failures,
    )
