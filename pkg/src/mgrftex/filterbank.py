"""Fixed bank of linear filters usable as histogram features.

The bank holds 64 filters: Laplacian-of-Gaussian kernels on the scale ladder
sigma in {sqrt(2)/2, 1, 2, 4}, and Gabor pairs (even cosine / odd sine) at 10
evenly spaced orientations for wavelengths {2, 4, 6} pixels.  Grids are odd
sided, at most 17x17.  Every kernel is zero-sum, so a constant image responds
with exactly 0.  Responses over the valid region (no padding) are quantized
by 16 equal-width bins spanning the training-image response range plus two
overflow bins; the edges are frozen into the feature kind.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from . import features as ft
from .imagecore import GreyImage

__all__ = [
    "LinearFilter",
    "build_filter_bank",
    "gabor_kernel",
    "log_kernel",
    "footprint_offsets",
    "response_map",
    "response_quantizer",
    "filter_response_histogram",
    "to_feature_kind",
    "bank_description",
]

MAX_SIDE = 17
N_QUANT_BINS = 16

LOG_SIGMAS = (math.sqrt(2) / 2, 1.0, 2.0, 4.0)
GABOR_WAVELENGTHS = (2.0, 4.0, 6.0)
N_ORIENTATIONS = 10


@dataclass(frozen=True)
class LinearFilter:
    filter_id: str
    coeffs: np.ndarray  # (side, side), odd side <= 17, zero-sum

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        object.__setattr__(self, "coeffs", c)
        side = c.shape[0]
        if c.ndim != 2 or c.shape[0] != c.shape[1] or side % 2 == 0 or side > MAX_SIDE:
            raise ValueError("filter grid must be odd-sided square, side <= 17")

    @property
    def side(self) -> int:
        return self.coeffs.shape[0]


def _half_width(sigma: float) -> int:
    return min((MAX_SIDE - 1) // 2, max(1, math.ceil(2.5 * sigma)))


def log_kernel(sigma: float) -> np.ndarray:
    hw = _half_width(sigma)
    y, x = np.mgrid[-hw : hw + 1, -hw : hw + 1].astype(np.float64)
    r2 = x * x + y * y
    k = (r2 / (2 * sigma**2) - 1.0) * np.exp(-r2 / (2 * sigma**2))
    return k - k.mean()


def gabor_kernel(wavelength: float, theta: float, odd: bool) -> np.ndarray:
    sigma = wavelength / 2.0
    hw = _half_width(sigma)
    y, x = np.mgrid[-hw : hw + 1, -hw : hw + 1].astype(np.float64)
    xr = x * math.cos(theta) + y * math.sin(theta)
    yr = -x * math.sin(theta) + y * math.cos(theta)
    env = np.exp(-(xr * xr + yr * yr) / (2 * sigma**2))
    phase = 2 * math.pi * xr / wavelength
    k = env * (np.sin(phase) if odd else np.cos(phase))
    return k - k.mean()


def build_filter_bank() -> list[LinearFilter]:
    """Deterministic 64-filter bank: 4 LoG + 10 orientations x 3 wavelengths x 2 phases."""
    bank = []
    for sigma in LOG_SIGMAS:
        bank.append(LinearFilter(f"log:s{sigma:.3f}", log_kernel(sigma)))
    for wl in GABOR_WAVELENGTHS:
        for k in range(N_ORIENTATIONS):
            theta = math.pi * k / N_ORIENTATIONS
            for odd in (False, True):
                phase = "odd" if odd else "even"
                bank.append(
                    LinearFilter(
                        f"gabor:w{wl:g}:o{k}:{phase}", gabor_kernel(wl, theta, odd)
                    )
                )
    return bank


def bank_description(bank=None) -> str:
    """Text dump of the bank composition for audit."""
    bank = bank or build_filter_bank()
    lines = [f"{len(bank)} filters"]
    for f in bank:
        lines.append(f"{f.filter_id} side={f.side} sum={f.coeffs.sum():.2e}")
    return "\n".join(lines) + "\n"


def footprint_offsets(filt: LinearFilter) -> ft.Offsets:
    """Offset list of the filter footprint, center (0,0) first, then row-major."""
    hw = (filt.side - 1) // 2
    offs = [(0, 0)]
    for dy in range(-hw, hw + 1):
        for dx in range(-hw, hw + 1):
            if (dx, dy) != (0, 0):
                offs.append((dx, dy))
    return tuple(offs)


def _aligned_coeffs(filt: LinearFilter) -> list[float]:
    hw = (filt.side - 1) // 2
    out = [float(filt.coeffs[hw, hw])]
    for dy in range(-hw, hw + 1):
        for dx in range(-hw, hw + 1):
            if (dx, dy) != (0, 0):
                out.append(float(filt.coeffs[dy + hw, dx + hw]))
    return out


def response_map(filt: LinearFilter, img: GreyImage) -> np.ndarray:
    """Valid-region correlation of the image with the filter."""
    if img.width < filt.side or img.height < filt.side:
        raise ValueError("image smaller than the filter grid")
    k = filt.coeffs[::-1, ::-1]
    return fftconvolve(img.pixels.astype(np.float64), k, mode="valid")


def response_quantizer(filt: LinearFilter, training: GreyImage) -> np.ndarray:
    """Equal-width bin edges over the training response range, frozen thereafter.

    16 interior bins between the extreme responses, with the outer edges
    nudged outward so the extremes land in interior bins; anything beyond
    falls in the two overflow bins.
    """
    r = response_map(filt, training)
    lo, hi = float(r.min()), float(r.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, N_QUANT_BINS + 1)
    guard = 1e-9 * (hi - lo + 1.0)
    edges[0] -= guard
    edges[-1] += guard
    return edges


def filter_response_histogram(
    filt: LinearFilter, img: GreyImage, edges: np.ndarray | None = None
) -> ft.HistogramStats:
    """Histogram of quantized responses over the valid region."""
    r = response_map(filt, img)
    if edges is None:
        edges = response_quantizer(filt, img)
    bins = np.searchsorted(np.asarray(edges), r.ravel(), side="right")
    counts = np.bincount(bins, minlength=len(edges) + 1)
    return ft.HistogramStats.from_counts(counts)


def to_feature_kind(filt: LinearFilter, edges) -> ft.FeatureKind:
    return ft.filter_kind(filt.filter_id, _aligned_coeffs(filt), edges)
