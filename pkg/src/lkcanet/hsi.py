"""Hyperspectral cube I/O, bicubic resampling, patch extraction, and splits.

A cube is a (bands, height, width) float32 array of samples normalized to
[0, 1], carried by :class:`HsiCube` together with free-form metadata.

On-disk container (``.hsc``): 8-byte magic ``HSCUBE01``, a little-endian
uint32 header length, a UTF-8 JSON header ``{"bands", "height", "width",
"meta"}``, then band-sequential little-endian float32 samples. The write ->
read round trip is bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"HSCUBE01"

# Hard cap on declared payload size (bytes) so corrupt headers fail fast.
_MAX_PAYLOAD = 1 << 40


class CubeError(ValueError):
    """Base class for cube container and validation failures."""


class CubeFormatError(CubeError):
    """Malformed container: bad magic or unparseable header."""


class CubeTruncatedError(CubeError):
    """Payload shorter (or longer) than the header declares."""


class CubeValidationError(CubeError):
    """Sample data violates invariants (non-finite, out of range, bad extents)."""


@dataclass
class HsiCube:
    """A hyperspectral cube: float32 samples in [0, 1], band-sequential.

    Attributes:
        data: (bands, height, width) float32 array.
        meta: optional JSON-serializable metadata (name, ground sample
            distance, wavelength range, normalization max, ...).
    """

    data: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        self.validate()

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    def validate(self) -> None:
        if self.data.ndim != 3:
            raise CubeValidationError(
                f"cube data must be 3-D (bands, height, width), got ndim={self.data.ndim}"
            )
        if self.data.dtype != np.float32:
            raise CubeValidationError(
                f"cube data must be float32, got {self.data.dtype}"
            )
        if min(self.data.shape) < 1:
            raise CubeValidationError(f"cube extents must be >= 1, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise CubeValidationError("cube contains NaN or Inf samples")
        lo, hi = float(self.data.min()), float(self.data.max())
        if lo < 0.0 or hi > 1.0:
            raise CubeValidationError(
                f"cube samples must lie in [0, 1] after normalization, got [{lo}, {hi}]"
            )

    def crop(self, row: int, col: int, height: int, width: int) -> "HsiCube":
        if row < 0 or col < 0 or row + height > self.height or col + width > self.width:
            raise CubeValidationError(
                f"crop ({row},{col},{height},{width}) exceeds cube extent "
                f"{self.height}x{self.width}"
            )
        return HsiCube(self.data[:, row : row + height, col : col + width].copy(), dict(self.meta))


def normalize(raw: np.ndarray, meta: dict | None = None) -> HsiCube:
    """Scale raw radiance samples to [0, 1] by the dataset-wide maximum.

    The maximum is recorded in ``meta["norm_max"]`` so metric values can be
    traced back to the normalization convention.
    """
    arr = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise CubeValidationError("raw samples contain NaN or Inf; cannot normalize")
    top = float(arr.max())
    if top <= 0.0:
        raise CubeValidationError("raw samples have nonpositive maximum; cannot normalize")
    arr = np.clip(arr, 0.0, None) / top
    meta = dict(meta or {})
    meta["norm_max"] = top
    return HsiCube(arr.astype(np.float32), meta)


def write_cube(cube: HsiCube, path) -> None:
    cube.validate()
    header = json.dumps(
        {"bands": cube.bands, "height": cube.height, "width": cube.width, "meta": cube.meta},
        sort_keys=True,
    ).encode("utf-8")
    payload = np.ascontiguousarray(cube.data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)


def read_cube(path) -> HsiCube:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise CubeFormatError(f"{path}: not an HSC cube (bad magic)")
    off = len(MAGIC)
    if len(blob) < off + 4:
        raise CubeTruncatedError(f"{path}: truncated before header length")
    (hlen,) = struct.unpack_from("<I", blob, off)
    off += 4
    if len(blob) < off + hlen:
        raise CubeTruncatedError(f"{path}: truncated header")
    try:
        header = json.loads(blob[off : off + hlen].decode("utf-8"))
        bands, height, width = int(header["bands"]), int(header["height"]), int(header["width"])
        meta = header.get("meta", {})
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise CubeFormatError(f"{path}: unparseable header ({exc})") from exc
    off += hlen
    if min(bands, height, width) < 1:
        raise CubeValidationError(f"{path}: header declares extents <= 0: {bands}x{height}x{width}")
    nbytes = bands * height * width * 4
    if nbytes > _MAX_PAYLOAD:
        raise CubeValidationError(
            f"{path}: declared extents {bands}x{height}x{width} overflow the payload cap"
        )
    if len(blob) - off < nbytes:
        raise CubeTruncatedError(
            f"{path}: truncated payload (expected {nbytes} bytes, found {len(blob) - off})"
        )
    if len(blob) - off > nbytes:
        raise CubeTruncatedError(
            f"{path}: trailing bytes after payload (expected {nbytes}, found {len(blob) - off})"
        )
    data = np.frombuffer(blob, dtype="<f4", count=bands * height * width, offset=off)
    return HsiCube(data.reshape(bands, height, width).copy(), meta)


# ---------------------------------------------------------------------------
# Bicubic resampling
# ---------------------------------------------------------------------------


def _cubic_kernel(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    # Keys/Catmull-Rom style cubic convolution kernel.
    t = np.abs(t)
    t2 = t * t
    t3 = t2 * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def _cubic_taps(src_len: int, out_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-output-pixel source indices (out, 4) and kernel weights (out, 4)."""
    pos = (np.arange(out_len, dtype=np.float64) + 0.5) * (src_len / out_len) - 0.5
    base = np.floor(pos).astype(np.int64)
    frac = pos - base
    offsets = np.arange(-1, 3)
    idx = base[:, None] + offsets[None, :]
    weights = _cubic_kernel(frac[:, None] - offsets[None, :])
    idx = np.clip(idx, 0, src_len - 1)  # edge clamp
    return idx, weights


def _resize_axis(arr: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    idx, w = _cubic_taps(arr.shape[axis], out_len)
    shape = [1] * arr.ndim
    shape[axis] = out_len
    out = np.zeros(arr.shape[:axis] + (out_len,) + arr.shape[axis + 1 :], dtype=np.float64)
    for k in range(4):
        out += w[:, k].reshape(shape) * np.take(arr, idx[:, k], axis=axis)
    return out


def resize_bands(arr: np.ndarray, out_h: int, out_w: int, clamp: bool = True) -> np.ndarray:
    """Bicubic (a = -0.5, edge-clamped) resize of the trailing two axes.

    Each band/leading slice is resampled independently. Computation is in
    double precision; the result is cast back to the input dtype and, by
    default, clamped to [0, 1].
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output extents must be >= 1, got {out_h}x{out_w}")
    a = np.asarray(arr)
    work = a.astype(np.float64, copy=False)
    work = _resize_axis(work, out_h, axis=a.ndim - 2)
    work = _resize_axis(work, out_w, axis=a.ndim - 1)
    if clamp:
        work = np.clip(work, 0.0, 1.0)
    return work.astype(a.dtype, copy=False)


def bicubic_resize(cube: HsiCube, out_h: int, out_w: int) -> HsiCube:
    """Band-wise bicubic resize of a cube, output clamped to [0, 1]."""
    return HsiCube(resize_bands(cube.data, out_h, out_w), dict(cube.meta))


def degrade(cube: HsiCube, r: int) -> HsiCube:
    """Bicubic downsampling by an integral factor r (extents must divide)."""
    if r < 1:
        raise ValueError(f"scale factor must be >= 1, got {r}")
    if cube.height % r or cube.width % r:
        raise CubeValidationError(
            f"extents {cube.height}x{cube.width} not divisible by scale factor {r}"
        )
    return bicubic_resize(cube, cube.height // r, cube.width // r)


def degrade_array(hr: np.ndarray, r: int) -> np.ndarray:
    """Array variant of :func:`degrade` for (.., H, W) patch stacks."""
    h, w = hr.shape[-2], hr.shape[-1]
    if h % r or w % r:
        raise ValueError(f"extents {h}x{w} not divisible by scale factor {r}")
    return resize_bands(hr, h // r, w // r)


# ---------------------------------------------------------------------------
# Patch extraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PatchSpec:
    """High-resolution patch geometry for training-set construction."""

    patch_size: int
    overlap: int
    scale_factor: int

    def __post_init__(self):
        if not (0 <= self.overlap < self.patch_size):
            raise ValueError(
                f"overlap must satisfy 0 <= overlap < patch_size, got {self.overlap}/{self.patch_size}"
            )
        if self.scale_factor < 1 or self.patch_size % self.scale_factor:
            raise ValueError(
                f"patch_size {self.patch_size} must be divisible by scale factor {self.scale_factor}"
            )

    @property
    def stride(self) -> int:
        return self.patch_size - self.overlap


@dataclass(frozen=True)
class PatchPair:
    """An HR patch with its bicubic-degraded LR counterpart."""

    hr: np.ndarray  # (B, s, s)
    lr: np.ndarray  # (B, s/r, s/r)
    origin: tuple[int, int]  # (row, col) of the HR patch in the source cube


def patch_origins(extent: int, patch_size: int, stride: int) -> list[int]:
    """Origins along one axis: count = floor((extent - size) / stride) + 1."""
    if extent < patch_size:
        raise ValueError(f"extent {extent} smaller than patch size {patch_size}")
    n = (extent - patch_size) // stride + 1
    return [i * stride for i in range(n)]


def extract_patches(cube: HsiCube, spec: PatchSpec) -> list[PatchPair]:
    """All HR/LR patch pairs of a cube in deterministic row-major origin order."""
    rows = patch_origins(cube.height, spec.patch_size, spec.stride)
    cols = patch_origins(cube.width, spec.patch_size, spec.stride)
    out = []
    for r0 in rows:
        for c0 in cols:
            hr = cube.data[:, r0 : r0 + spec.patch_size, c0 : c0 + spec.patch_size].copy()
            lr = degrade_array(hr, spec.scale_factor)
            out.append(PatchPair(hr=hr, lr=lr, origin=(r0, c0)))
    return out


# ---------------------------------------------------------------------------
# Dataset split protocols
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Region:
    """A rectangular spatial region (row, col, height, width)."""

    row: int
    col: int
    height: int
    width: int

    def intersects(self, other: "Region") -> bool:
        return not (
            self.row + self.height <= other.row
            or other.row + other.height <= self.row
            or self.col + self.width <= other.col
            or other.col + other.width <= self.col
        )

    def within(self, height: int, width: int) -> bool:
        return (
            self.row >= 0
            and self.col >= 0
            and self.row + self.height <= height
            and self.col + self.width <= width
        )

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.row, self.col, self.height, self.width)


@dataclass(frozen=True)
class SplitProtocol:
    """Test-region layout and training-sampling rules for one dataset.

    ``expected_shape`` is the (height, width) the region list was designed
    for; larger cubes are center-cropped to it first. ``exclusions`` are
    strips that belong to neither the test nor the training area.
    """

    dataset: str
    test_regions: tuple[Region, ...]
    exclusions: tuple[Region, ...] = ()
    expected_shape: tuple[int, int] | None = None
    validation_fraction: float = 0.10


def chikusei_protocol() -> SplitProtocol:
    # Four 512x2048 test regions stacked from the top of the 2304x2048 crop.
    regions = tuple(Region(512 * i, 0, 512, 2048) for i in range(4))
    return SplitProtocol("chikusei", regions, (), (2304, 2048))


def houston2018_protocol() -> SplitProtocol:
    # Eight 256x256 test regions tiling the top 512x1024 area; the 512x178
    # strip right of them is too small for testing and is excluded entirely.
    regions = tuple(Region(256 * (i // 4), 256 * (i % 4), 256, 256) for i in range(8))
    exclusions = (Region(0, 1024, 512, 178),)
    return SplitProtocol("houston2018", regions, exclusions, (4172, 1202))


def pavia_protocol() -> SplitProtocol:
    # Three 224x224 test regions along the top; the leftover 224x43 strip is
    # excluded.
    regions = tuple(Region(0, 224 * i, 224, 224) for i in range(3))
    exclusions = (Region(0, 672, 224, 43),)
    return SplitProtocol("pavia", regions, exclusions, (1096, 715))


_PROTOCOLS = {
    "chikusei": chikusei_protocol,
    "houston2018": houston2018_protocol,
    "pavia": pavia_protocol,
}


def named_protocol(name: str) -> SplitProtocol:
    try:
        return _PROTOCOLS[name]()
    except KeyError:
        raise ValueError(
            f"unknown dataset protocol {name!r}; expected one of {sorted(_PROTOCOLS)} or 'custom'"
        ) from None


def custom_protocol(
    test_regions: list[tuple[int, int, int, int]],
    exclusions: list[tuple[int, int, int, int]] | None = None,
    validation_fraction: float = 0.10,
) -> SplitProtocol:
    return SplitProtocol(
        "custom",
        tuple(Region(*r) for r in test_regions),
        tuple(Region(*r) for r in (exclusions or [])),
        None,
        validation_fraction,
    )


def central_crop(cube: HsiCube, height: int, width: int) -> HsiCube:
    if height > cube.height or width > cube.width:
        raise CubeValidationError(
            f"cannot centrally crop {cube.height}x{cube.width} to {height}x{width}"
        )
    r0 = (cube.height - height) // 2
    c0 = (cube.width - width) // 2
    return cube.crop(r0, c0, height, width)


@dataclass
class Split:
    """Materialized dataset split: patch pairs plus whole test regions."""

    train: list[PatchPair]
    val: list[PatchPair]
    test: list[HsiCube]
    manifest: dict


def build_split(cube: HsiCube, protocol: SplitProtocol, spec: PatchSpec, seed: int = 0) -> Split:
    """Crop test regions, patch the remainder, and split train/val by seed.

    Test regions are kept whole (never patched). Training/validation patches
    are drawn from the rest of the cube; any candidate patch that intersects
    a test region or exclusion zone is dropped, which is re-checked by a
    final set-intersection assertion.
    """
    if protocol.expected_shape is not None:
        eh, ew = protocol.expected_shape
        if (cube.height, cube.width) != (eh, ew):
            cube = central_crop(cube, eh, ew)

    forbidden = list(protocol.test_regions) + list(protocol.exclusions)
    for i, reg in enumerate(protocol.test_regions):
        if not reg.within(cube.height, cube.width):
            raise CubeValidationError(f"test region {reg.as_tuple()} exceeds cube bounds")
        for other in protocol.test_regions[i + 1 :]:
            if reg.intersects(other):
                raise CubeValidationError(
                    f"test regions {reg.as_tuple()} and {other.as_tuple()} overlap"
                )

    rows = patch_origins(cube.height, spec.patch_size, spec.stride)
    cols = patch_origins(cube.width, spec.patch_size, spec.stride)
    kept_origins = []
    for r0 in rows:
        for c0 in cols:
            candidate = Region(r0, c0, spec.patch_size, spec.patch_size)
            if not any(candidate.intersects(f) for f in forbidden):
                kept_origins.append((r0, c0))

    for r0, c0 in kept_origins:
        patch = Region(r0, c0, spec.patch_size, spec.patch_size)
        assert not any(
            patch.intersects(t) for t in protocol.test_regions
        ), f"training patch at {(r0, c0)} intersects a test region"

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(kept_origins))
    shuffled = [kept_origins[i] for i in order]
    n_val = int(len(shuffled) * protocol.validation_fraction)
    val_origins = sorted(shuffled[:n_val])
    train_origins = sorted(shuffled[n_val:])

    def materialize(origins):
        pairs = []
        for r0, c0 in origins:
            hr = cube.data[:, r0 : r0 + spec.patch_size, c0 : c0 + spec.patch_size].copy()
            pairs.append(PatchPair(hr=hr, lr=degrade_array(hr, spec.scale_factor), origin=(r0, c0)))
        return pairs

    test = [cube.crop(*r.as_tuple()) for r in protocol.test_regions]
    manifest = {
        "dataset": protocol.dataset,
        "seed": seed,
        "cube_shape": list(cube.shape),
        "scale_factor": spec.scale_factor,
        "patch_size": spec.patch_size,
        "overlap": spec.overlap,
        "validation_fraction": protocol.validation_fraction,
        "test_regions": [r.as_tuple() for r in protocol.test_regions],
        "exclusions": [r.as_tuple() for r in protocol.exclusions],
        "train_origins": [list(o) for o in train_origins],
        "val_origins": [list(o) for o in val_origins],
    }
    return Split(train=materialize(train_origins), val=materialize(val_origins), test=test, manifest=manifest)
