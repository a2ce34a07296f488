"""Evaluation metrics for reconstructed hyperspectral images.

Six quality indices over (B, H, W) or batched (N, B, H, W) stacks of data in
[0, 1]: mean PSNR and SSIM over bands, spectral angle in degrees, mean
per-band Pearson correlation, global RMSE, and the relative global synthesis
error. Batched inputs are scored per image and averaged.

All computation runs in double precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PSNR_CAP_DB = 100.0

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_RANGE = 1.0

_CSV_COLUMNS = ("MPSNR", "MSSIM", "SAM", "CC", "RMSE", "ERGAS")


@dataclass
class MetricResult:
    mpsnr: float
    mssim: float
    sam: float  # degrees
    cc: float
    rmse: float
    ergas: float
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "MPSNR": self.mpsnr,
            "MSSIM": self.mssim,
            "SAM": self.sam,
            "CC": self.cc,
            "RMSE": self.rmse,
            "ERGAS": self.ergas,
        }

    def as_csv_row(self) -> str:
        d = self.as_dict()
        return ",".join(repr(d[c]) for c in _CSV_COLUMNS)

    @staticmethod
    def csv_header() -> str:
        return ",".join(_CSV_COLUMNS)


def _check_pair(sr, hr):
    a = np.asarray(sr, dtype=np.float64)
    b = np.asarray(hr, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"metric inputs must share a shape, got {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a, b = a[None], b[None]
    if a.ndim != 4:
        raise ValueError(f"expected (B, H, W) or (N, B, H, W) inputs, got ndim {a.ndim}")
    return a, b


def band_psnr(sr_band: np.ndarray, hr_band: np.ndarray, peak: float = 1.0) -> float:
    mse = float(np.mean((sr_band - hr_band) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(peak * peak / mse), PSNR_CAP_DB)


def mpsnr(sr, hr) -> float:
    a, b = _check_pair(sr, hr)
    vals = [
        band_psnr(a[n, c], b[n, c]) for n in range(a.shape[0]) for c in range(a.shape[1])
    ]
    return float(np.mean(vals))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    # Separable "valid" convolution with a symmetric window.
    k = window.size
    h, w = img.shape
    rows = np.zeros((h, w - k + 1), dtype=np.float64)
    for i in range(k):
        rows += window[i] * img[:, i : i + w - k + 1]
    out = np.zeros((h - k + 1, w - k + 1), dtype=np.float64)
    for i in range(k):
        out += window[i] * rows[i : i + h - k + 1, :]
    return out


def band_ssim(sr_band: np.ndarray, hr_band: np.ndarray) -> float:
    """Structural similarity with an 11x11 Gaussian window (sigma 1.5),
    K1 = 0.01, K2 = 0.03, dynamic range 1.0, averaged over the valid area."""
    x = np.asarray(sr_band, dtype=np.float64)
    y = np.asarray(hr_band, dtype=np.float64)
    if min(x.shape) < _SSIM_WINDOW:
        raise ValueError(
            f"band extent {x.shape} smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} SSIM window"
        )
    win = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)
    c1 = (_SSIM_K1 * _SSIM_RANGE) ** 2
    c2 = (_SSIM_K2 * _SSIM_RANGE) ** 2
    mx = _filter_valid(x, win)
    my = _filter_valid(y, win)
    sxx = _filter_valid(x * x, win) - mx * mx
    syy = _filter_valid(y * y, win) - my * my
    sxy = _filter_valid(x * y, win) - mx * my
    num = (2.0 * mx * my + c1) * (2.0 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def mssim(sr, hr) -> float:
    a, b = _check_pair(sr, hr)
    vals = [
        band_ssim(a[n, c], b[n, c]) for n in range(a.shape[0]) for c in range(a.shape[1])
    ]
    return float(np.mean(vals))


def sam_degrees(sr, hr, eps: float = 1e-8) -> float:
    """Mean spectral angle in degrees, stable half-angle form (exactly zero
    for identical inputs). Pixels with a zero spectrum on either side
    contribute the angle of the guarded unit vectors."""
    a, b = _check_pair(sr, hr)
    na = np.sqrt((a * a).sum(axis=1, keepdims=True))
    nb = np.sqrt((b * b).sum(axis=1, keepdims=True))
    u = a / np.maximum(na, eps)
    v = b / np.maximum(nb, eps)
    dq = np.sqrt(((u - v) ** 2).sum(axis=1))
    dp = np.sqrt(((u + v) ** 2).sum(axis=1))
    theta = 2.0 * np.arctan2(dq, dp)
    return float(np.degrees(theta.mean()))


def cc(sr, hr) -> tuple[float, int]:
    """Mean per-band Pearson correlation.

    A zero-variance band scores 1 when both sides are constant and equal,
    else 0; the count of such degenerate bands is returned for flagging.
    """
    a, b = _check_pair(sr, hr)
    vals = []
    degenerate = 0
    for n in range(a.shape[0]):
        for c_idx in range(a.shape[1]):
            x = a[n, c_idx].ravel()
            y = b[n, c_idx].ravel()
            xc = x - x.mean()
            yc = y - y.mean()
            denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
            if denom == 0.0:
                degenerate += 1
                vals.append(1.0 if np.array_equal(x, y) else 0.0)
            else:
                vals.append(float((xc * yc).sum() / denom))
    return float(np.mean(vals)), degenerate


def rmse(sr, hr) -> float:
    a, b = _check_pair(sr, hr)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def ergas(sr, hr, r: int, eps: float = 1e-12) -> float:
    """Relative global synthesis error:
    100 / r * sqrt(mean over bands of (RMSE_b / mean_b)^2), with the band
    mean taken from the reference."""
    if r < 1:
        raise ValueError(f"scale factor must be >= 1, got {r}")
    a, b = _check_pair(sr, hr)
    terms = []
    for n in range(a.shape[0]):
        band_rmse = np.sqrt(((a[n] - b[n]) ** 2).mean(axis=(1, 2)))
        band_mean = b[n].mean(axis=(1, 2))
        terms.append(np.mean((band_rmse / np.maximum(band_mean, eps)) ** 2))
    return float(100.0 / r * np.sqrt(np.mean(terms)))


def evaluate_metrics(sr, hr, r: int) -> MetricResult:
    """All six indices for one reconstruction against its reference."""
    cc_val, degenerate = cc(sr, hr)
    notes = []
    if degenerate:
        notes.append(f"{degenerate} zero-variance band(s) in the correlation metric")
    return MetricResult(
        mpsnr=mpsnr(sr, hr),
        mssim=mssim(sr, hr),
        sam=sam_degrees(sr, hr),
        cc=cc_val,
        rmse=rmse(sr, hr),
        ergas=ergas(sr, hr, r),
        notes=notes,
    )


def average_metrics(results: list[MetricResult]) -> MetricResult:
    """Plain mean of each index over per-region results."""
    if not results:
        raise ValueError("cannot average an empty metric list")
    notes = [n for res in results for n in res.notes]
    return MetricResult(
        mpsnr=float(np.mean([m.mpsnr for m in results])),
        mssim=float(np.mean([m.mssim for m in results])),
        sam=float(np.mean([m.sam for m in results])),
        cc=float(np.mean([m.cc for m in results])),
        rmse=float(np.mean([m.rmse for m in results])),
        ergas=float(np.mean([m.ergas for m in results])),
        notes=notes,
    )
