"""The super-resolution network: stacked large-kernel channel-attention
blocks, a learnable sub-pixel upsampling head, and a bicubic skip path.

Also owns exact parameter accounting, FLOPs estimation, and the binary
checkpoint container (magic ``LKCACKPT``).

A model instance is immutable during forward, so concurrent forwards on
shared weights are safe; training mutates parameters single-writer.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import ops
from .autodiff import Var, no_grad
from .hsi import resize_bands

CHECKPOINT_MAGIC = b"LKCACKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed, truncated, or mismatched checkpoint files."""


@dataclass(frozen=True)
class UpsamplerSpec:
    """Shape contract of the learnable upsampling convolution.

    The convolution feeds a pixel shuffle, so its output channels must be
    bands * r^2. ``groups > 1`` is the low-rank (block-diagonal) variant;
    weights hold exactly ``in_channels * out_channels * kernel^2 / groups``
    parameters (the layer is bias-free, so this count is exact).
    """

    in_channels: int
    out_channels: int
    kernel: int = 3
    groups: int = 1

    def __post_init__(self):
        if self.groups < 1:
            raise ValueError(f"groups must be >= 1, got {self.groups}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ValueError(
                f"groups={self.groups} must divide in={self.in_channels} "
                f"and out={self.out_channels} channels"
            )

    @property
    def kind(self) -> str:
        return "full" if self.groups == 1 else f"grouped({self.groups})"

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, self.kernel, self.kernel)

    def param_count(self) -> int:
        return self.in_channels * self.out_channels * self.kernel**2 // self.groups


@dataclass(frozen=True)
class NetConfig:
    """Architecture hyperparameters.

    Defaults follow the reference configuration: 128 feature channels, 16
    blocks, cascaded depthwise convolutions with dilations 5 and 7, grouped
    1x1 fusion, and a single-stage conv + pixel-shuffle upsampling head.
    """

    bands: int
    scale_factor: int
    feature_channels: int = 128
    num_blocks: int = 16
    kernel_sizes: tuple[int, int] = (5, 7)
    dilations: tuple[int, int] = (5, 7)
    lkca_groups: int = 4
    ca_reduction: int = 16
    upsampler_groups: int = 1
    drop_path_rate: float = 0.1
    block_out_projection: bool = True

    def __post_init__(self):
        c = self.feature_channels
        if self.bands < 1 or c < 1 or self.num_blocks < 0:
            raise ValueError("bands/channels must be >= 1 and num_blocks >= 0")
        if self.scale_factor < 1:
            raise ValueError(f"scale factor must be >= 1, got {self.scale_factor}")
        if c % self.lkca_groups or (3 * c) % self.lkca_groups:
            raise ValueError(
                f"lkca_groups={self.lkca_groups} must divide C={c} and 3C={3 * c}"
            )
        if (3 * c) % self.ca_reduction:
            raise ValueError(
                f"ca_reduction={self.ca_reduction} must divide the attention width 3C={3 * c}"
            )
        if not (0.0 <= self.drop_path_rate <= 1.0):
            raise ValueError(f"drop_path_rate must lie in [0, 1], got {self.drop_path_rate}")
        self.upsampler_spec()  # validates the group divisibility

    @property
    def upsampler_out(self) -> int:
        # Pixel shuffle demands bands * r^2 channels into the rearrangement.
        return self.bands * self.scale_factor**2

    def upsampler_spec(self) -> UpsamplerSpec:
        return UpsamplerSpec(
            in_channels=self.feature_channels,
            out_channels=self.upsampler_out,
            kernel=3,
            groups=self.upsampler_groups,
        )

    def with_upsampler_groups(self, groups: int) -> "NetConfig":
        return replace(self, upsampler_groups=groups)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel_sizes"] = list(self.kernel_sizes)
        d["dilations"] = list(self.dilations)
        return d

    @staticmethod
    def from_dict(d: dict) -> "NetConfig":
        d = dict(d)
        d["kernel_sizes"] = tuple(d["kernel_sizes"])
        d["dilations"] = tuple(d["dilations"])
        return NetConfig(**d)


# ---------------------------------------------------------------------------
# Parameter accounting (pure config arithmetic, no model construction)
# ---------------------------------------------------------------------------


def param_breakdown(config: NetConfig) -> dict[str, int]:
    """Exact scalar-parameter count per named layer."""
    b, c, k = config.bands, config.feature_channels, 3
    k1, k2 = config.kernel_sizes
    out: dict[str, int] = {"head": b * c * k * k + c}
    for i in range(config.num_blocks):
        p = f"blocks.{i}."
        out[p + "norm"] = 2 * c
        out[p + "proj_in"] = c * c + c
        out[p + "dw1"] = c * k1 * k1 + c
        out[p + "dw2"] = c * k2 * k2 + c
        hidden = 3 * c // config.ca_reduction
        out[p + "ca"] = (3 * c * hidden + hidden) + (hidden * 3 * c + 3 * c)
        out[p + "fuse"] = 3 * c * c // config.lkca_groups + c
        if config.block_out_projection:
            out[p + "proj_out"] = c * c + c
    out["upsampler"] = config.upsampler_spec().param_count()
    return out


def param_count(config: NetConfig) -> int:
    return sum(param_breakdown(config).values())


def flops_breakdown(config: NetConfig, input_h: int, input_w: int) -> dict[str, int]:
    """FLOPs (multiply-accumulates x 2) per layer for one LR input of the
    given size.

    Only convolution and linear-layer MACs are counted; elementwise
    activations, normalization, pooling, and the bicubic skip are excluded.
    """
    b, c = config.bands, config.feature_channels
    k1, k2 = config.kernel_sizes
    hw = input_h * input_w
    out: dict[str, int] = {"head": 2 * 9 * b * c * hw}
    for i in range(config.num_blocks):
        p = f"blocks.{i}."
        out[p + "proj_in"] = 2 * c * c * hw
        out[p + "dw1"] = 2 * c * k1 * k1 * hw
        out[p + "dw2"] = 2 * c * k2 * k2 * hw
        hidden = 3 * c // config.ca_reduction
        out[p + "ca"] = 2 * (3 * c * hidden) * 2
        out[p + "fuse"] = 2 * (3 * c) * c // config.lkca_groups * hw
        if config.block_out_projection:
            out[p + "proj_out"] = 2 * c * c * hw
    out["upsampler"] = 2 * 9 * c * config.upsampler_out // config.upsampler_groups * hw
    return out


def flops_estimate(config: NetConfig, input_h: int, input_w: int) -> int:
    return sum(flops_breakdown(config, input_h, input_w).values())


def receptive_radius(config: NetConfig) -> int:
    """Radius (in LR pixels) of the network's receptive footprint."""
    k1, k2 = config.kernel_sizes
    d1, d2 = config.dilations
    per_block = (k1 - 1) * d1 // 2 + (k2 - 1) * d2 // 2
    return 1 + config.num_blocks * per_block + 1  # head conv + blocks + upsampler conv


# ---------------------------------------------------------------------------
# The network
# ---------------------------------------------------------------------------


def _he_conv(rng, cout, cin_g, k, dtype):
    std = np.sqrt(2.0 / (cin_g * k * k))
    return (rng.standard_normal((cout, cin_g, k, k)) * std).astype(dtype)


def _he_linear(rng, cout, cin, dtype):
    std = np.sqrt(2.0 / cin)
    return (rng.standard_normal((cout, cin)) * std).astype(dtype)


class LkcaNet:
    """Shallow conv, stacked attention blocks, sub-pixel upsampling head, and
    a bicubic skip connection.

    ``forward`` returns both the reconstruction and the post-pixel-shuffle
    feature map, which is the alignment target for distillation.
    """

    def __init__(self, config: NetConfig, dtype=np.float32, seed: int = 0):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        b, c = config.bands, config.feature_channels
        k1, k2 = config.kernel_sizes

        p: dict[str, Var] = {}

        def param(name, value):
            p[name] = Var(value, name=name)

        param("head.weight", _he_conv(rng, c, b, 3, self.dtype))
        param("head.bias", np.zeros(c, dtype=self.dtype))
        for i in range(config.num_blocks):
            pre = f"blocks.{i}."
            param(pre + "norm.gamma", np.ones(c, dtype=self.dtype))
            param(pre + "norm.beta", np.zeros(c, dtype=self.dtype))
            param(pre + "proj_in.weight", _he_conv(rng, c, c, 1, self.dtype))
            param(pre + "proj_in.bias", np.zeros(c, dtype=self.dtype))
            param(pre + "dw1.weight", _he_conv(rng, c, 1, k1, self.dtype))
            param(pre + "dw1.bias", np.zeros(c, dtype=self.dtype))
            param(pre + "dw2.weight", _he_conv(rng, c, 1, k2, self.dtype))
            param(pre + "dw2.bias", np.zeros(c, dtype=self.dtype))
            hidden = 3 * c // config.ca_reduction
            param(pre + "ca.fc1.weight", _he_linear(rng, hidden, 3 * c, self.dtype))
            param(pre + "ca.fc1.bias", np.zeros(hidden, dtype=self.dtype))
            param(pre + "ca.fc2.weight", _he_linear(rng, 3 * c, hidden, self.dtype))
            param(pre + "ca.fc2.bias", np.zeros(3 * c, dtype=self.dtype))
            param(pre + "fuse.weight", _he_conv(rng, c, 3 * c // config.lkca_groups, 1, self.dtype))
            param(pre + "fuse.bias", np.zeros(c, dtype=self.dtype))
            if config.block_out_projection:
                param(pre + "proj_out.weight", _he_conv(rng, c, c, 1, self.dtype))
                param(pre + "proj_out.bias", np.zeros(c, dtype=self.dtype))
        spec = config.upsampler_spec()
        param("upsampler.weight", _he_conv(rng, spec.out_channels, c // spec.groups, 3, self.dtype))

        self.params = p

    # -- parameter plumbing -------------------------------------------------

    def zero_grad(self) -> None:
        for v in self.params.values():
            v.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        """Gradients per parameter; parameters that did not participate in
        the last backward pass report zeros."""
        return {
            name: (v.grad if v.grad is not None else np.zeros_like(v.value))
            for name, v in self.params.items()
        }

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: v.value for name, v in self.params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name in arrays:
            if name not in self.params:
                raise CheckpointError(f"unexpected tensor {name!r} for this config")
        for name, v in self.params.items():
            if name not in arrays:
                raise CheckpointError(f"missing tensor {name!r}")
            arr = np.asarray(arrays[name], dtype=self.dtype)
            if arr.shape != v.value.shape:
                raise CheckpointError(
                    f"tensor {name!r} has shape {arr.shape}, config expects {v.value.shape}"
                )
            v.value = arr.copy()

    def set_zero_weights(self) -> None:
        """Zero every parameter; the forward then reduces to the bicubic skip."""
        for v in self.params.values():
            v.value = np.zeros_like(v.value)

    @property
    def receptive_radius(self) -> int:
        return receptive_radius(self.config)

    # -- forward ------------------------------------------------------------

    def lkca_forward(self, f_u: Var, block: int = 0) -> Var:
        """The attention unit: cascaded dilated depthwise convs, concat,
        channel attention, grouped 1x1 fusion, multiplicative gate."""
        cfg = self.config
        p = self.params
        pre = f"blocks.{block}."
        d1, d2 = cfg.dilations
        c = cfg.feature_channels
        a1 = ops.conv2d(f_u, p[pre + "dw1.weight"], p[pre + "dw1.bias"], dilation=d1, groups=c)
        a2 = ops.conv2d(a1, p[pre + "dw2.weight"], p[pre + "dw2.bias"], dilation=d2, groups=c)
        a_c = ops.concat_channels([f_u, a1, a2])
        a_ca = ops.channel_attention(
            a_c,
            p[pre + "ca.fc1.weight"],
            p[pre + "ca.fc1.bias"],
            p[pre + "ca.fc2.weight"],
            p[pre + "ca.fc2.bias"],
        )
        a_f = ops.conv2d(a_ca, p[pre + "fuse.weight"], p[pre + "fuse.bias"], groups=cfg.lkca_groups)
        return ops.mul(a_f, f_u)

    def lkb_forward(self, x: Var, block: int = 0, training: bool = False, rng=None) -> Var:
        """One residual block: LN -> 1x1 conv -> GELU -> attention unit
        [-> 1x1 conv] -> drop path -> residual add."""
        cfg = self.config
        p = self.params
        pre = f"blocks.{block}."
        t = ops.layer_norm(x, p[pre + "norm.gamma"], p[pre + "norm.beta"])
        t = ops.conv2d(t, p[pre + "proj_in.weight"], p[pre + "proj_in.bias"])
        t = ops.gelu(t)
        t = self.lkca_forward(t, block)
        if cfg.block_out_projection:
            t = ops.conv2d(t, p[pre + "proj_out.weight"], p[pre + "proj_out.bias"])
        t = ops.drop_path(t, cfg.drop_path_rate, rng, training)
        return ops.add(x, t)

    def forward(self, x, training: bool = False, rng=None) -> tuple[Var, Var]:
        """Super-resolve a batch.

        Args:
            x: (N, bands, H, W) Var or array.
            training: enables drop path (requires rng when the rate is > 0).

        Returns:
            (reconstruction, upsampled_features): the reconstruction is
            upsampled_features + clamped bicubic upsampling of the input,
            both (N, bands, r*H, r*W).
        """
        from .autodiff import as_var

        x = as_var(x)
        cfg = self.config
        if x.value.ndim != 4 or x.shape[1] != cfg.bands:
            raise ValueError(
                f"input must be (N, {cfg.bands}, H, W) to match the configured bands, "
                f"got {x.shape}"
            )
        p = self.params
        f = ops.conv2d(x, p["head.weight"], p["head.bias"])
        for i in range(cfg.num_blocks):
            f = self.lkb_forward(f, i, training=training, rng=rng)
        f = ops.conv2d(f, p["upsampler.weight"], None, groups=cfg.upsampler_groups)
        f_up = ops.pixel_shuffle(f, cfg.scale_factor)
        r = cfg.scale_factor
        skip = resize_bands(x.value, x.shape[2] * r, x.shape[3] * r)
        i_sr = ops.add_const(f_up, skip)
        return i_sr, f_up

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Evaluation-mode forward on a plain array, no graph recorded."""
        with no_grad():
            i_sr, _ = self.forward(np.asarray(x, dtype=self.dtype))
        return i_sr.value


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: LkcaNet, path, metadata: dict | None = None) -> None:
    """Write config, metadata, and all named parameter tensors (f32 LE)."""
    if model.dtype != np.float32:
        raise CheckpointError(
            f"checkpoints store float32 tensors; model dtype is {model.dtype}"
        )
    header = json.dumps(
        {"config": model.config.to_dict(), "metadata": metadata or {}}, sort_keys=True
    ).encode("utf-8")
    arrays = model.state_arrays()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)


def _read_exact(fh, n: int, what: str) -> bytes:
    blob = fh.read(n)
    if len(blob) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return blob


def read_checkpoint_arrays(path) -> tuple[NetConfig, dict, dict[str, np.ndarray]]:
    """Parse a checkpoint container into (config, metadata, tensors)."""
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported checkpoint version {version} "
                f"(this build reads version {CHECKPOINT_VERSION})"
            )
        (hlen,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        header = json.loads(_read_exact(fh, hlen, "header").decode("utf-8"))
        config = NetConfig.from_dict(header["config"])
        metadata = header.get("metadata", {})
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read_exact(fh, 4, "tensor name length"))
            name = _read_exact(fh, nlen, "tensor name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, f"{name}: ndim"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, f"{name}: shape"))
            (nbytes,) = struct.unpack("<Q", _read_exact(fh, 8, f"{name}: payload size"))
            blob = _read_exact(fh, nbytes, f"{name}: payload")
            arr = np.frombuffer(blob, dtype="<f4")
            if arr.size != int(np.prod(shape)):
                raise CheckpointError(f"{path}: tensor {name!r} payload/shape mismatch")
            arrays[name] = arr.reshape(shape).copy()
    return config, metadata, arrays


def load_checkpoint(path) -> tuple[LkcaNet, dict]:
    """Rebuild a model from a checkpoint; forward outputs reproduce bit-exactly."""
    config, metadata, arrays = read_checkpoint_arrays(path)
    model = LkcaNet(config)
    model.load_state(arrays)
    return model, metadata


def load_weights(model: LkcaNet, path) -> dict:
    """Load tensors from a checkpoint into an existing model.

    Rejects mismatched configurations, naming the offending tensor.
    """
    _, metadata, arrays = read_checkpoint_arrays(path)
    model.load_state(arrays)
    return metadata
