"""Quantitative evaluation: MSSIM, exact enumeration oracle, inpainting benchmark."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy.signal import convolve2d

from . import features as ft
from .imagecore import GreyImage, linear_quantize, rescale_levels
from .learning import NestConfig, SelectorSpec, nest
from .mgrfmodel import NestedModel
from .sampling import centered_hole_mask, inpaint_with_raw

__all__ = [
    "mssim",
    "exact_expectations",
    "exact_log_likelihood",
    "BenchmarkReport",
    "inpaint_benchmark",
    "bilinear_scale",
    "BENCH_SCALE",
]

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _gaussian_window() -> np.ndarray:
    r = SSIM_WINDOW // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / SSIM_SIGMA) ** 2)
    g /= g.sum()
    return np.outer(g, g)


def mssim(a: GreyImage, b: GreyImage) -> float:
    """Mean structural similarity with an 11x11 Gaussian window, sigma 1.5.

    K1=0.01, K2=0.03; the dynamic range is levels-1 of the compared images.
    Windows are averaged over all positions fully inside both images.
    """
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError("images must have equal dimensions")
    if a.levels != b.levels:
        raise ValueError("images must share the same grey-level count")
    if a.width < SSIM_WINDOW or a.height < SSIM_WINDOW:
        raise ValueError("images smaller than the SSIM window")
    L = float(a.levels - 1)
    c1 = (SSIM_K1 * L) ** 2
    c2 = (SSIM_K2 * L) ** 2
    win = _gaussian_window()
    x = a.pixels.astype(np.float64)
    y = b.pixels.astype(np.float64)

    def f(img):
        return convolve2d(img, win, mode="valid")

    ux, uy = f(x), f(y)
    uxx, uyy, uxy = f(x * x), f(y * y), f(x * y)
    vx = uxx - ux * ux
    vy = uyy - uy * uy
    cov = uxy - ux * uy
    num = (2 * ux * uy + c1) * (2 * cov + c2)
    den = (ux * ux + uy * uy + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# Exact enumeration oracle (tiny lattices only)

MAX_STATES = 2**20


def _enumerate_states(q: int, cells: int) -> np.ndarray:
    n = q**cells
    states = np.empty((cells, n), dtype=np.int64)
    idx = np.arange(n, dtype=np.int64)
    for c in range(cells):
        states[c] = (idx // q**c) % q
    return states


def exact_expectations(
    model: NestedModel, lattice: tuple[int, int]
) -> tuple[list[ft.HistogramStats], float]:
    """Exhaustive expected histograms and log partition function.

    Enumerates all Q^(w*h) images of the lattice; only usable when that count
    stays at or below 2^20.  Returns per-potential expected normalized
    histograms and log Z of the raw Gibbs exponent.
    """
    w, h = lattice
    q = model.levels
    cells = w * h
    if q**cells > MAX_STATES:
        raise ValueError("state space too large for exact enumeration")
    states = _enumerate_states(q, cells)
    n = states.shape[1]

    plans = []  # (potential index, bins per anchor) reused for both passes
    energies = np.zeros(n)
    for p in model.potentials:
        xlo, xhi, ylo, yhi = ft.anchor_window(p.offsets, w, h)
        if xhi < xlo or yhi < ylo:
            raise ValueError(f"lattice too small for clique family {p.offsets}")
        anchor_bins = []
        for ay in range(ylo, yhi + 1):
            for ax in range(xlo, xhi + 1):
                cells_idx = [(ay + dy) * w + (ax + dx) for dx, dy in p.offsets]
                vals = states[cells_idx]
                bins = ft.bin_values(p.kind, vals)
                energies += p.theta[bins]
                anchor_bins.append(bins)
        plans.append(anchor_bins)

    emin = float(energies.min())
    weights = np.exp(-(energies - emin))
    z_shift = float(weights.sum())
    log_z = np.log(z_shift) - emin
    probs = weights / z_shift

    stats = []
    for p, anchor_bins in zip(model.potentials, plans):
        acc = np.zeros(p.kind.bins)
        for bins in anchor_bins:
            np.add.at(acc, bins, probs)
        stats.append(ft.HistogramStats(acc / len(anchor_bins), len(anchor_bins)))
    return stats, log_z


def exact_log_likelihood(model: NestedModel, img: GreyImage) -> float:
    """log p(img) under the model, by exhaustive enumeration of the lattice."""
    from .mgrfmodel import energy

    _, log_z = exact_expectations(model, (img.width, img.height))
    return -energy(model, img, normalized=False) - log_z


# ---------------------------------------------------------------------------
# Inpainting benchmark

BENCH_SCALE = {"D6": 0.5, "D21": 0.75, "D53": 0.5, "D77": 0.75}

FRAME_SIZE = 76
HOLE_SIZE = 54


def bilinear_scale(img: GreyImage, factor: float) -> GreyImage:
    """Standard bilinear resampling to round(dim * factor)."""
    if factor == 1.0:
        return img.copy()
    nw = max(1, round(img.width * factor))
    nh = max(1, round(img.height * factor))
    pil = Image.fromarray(img.pixels, mode="L").resize((nw, nh), Image.BILINEAR)
    return GreyImage(np.asarray(pil, dtype=np.uint8), img.levels)


@dataclass
class BenchmarkReport:
    texture_id: str
    reps: int
    mean: float  # MSSIM against the quantized ground truth, hole region
    sd: float
    mean_raw256: float  # against the 256-level ground truth, rescaled output
    sd_raw256: float
    wall_clock: float
    scores: list[float] = field(default_factory=list)
    scores_raw256: list[float] = field(default_factory=list)

    def csv(self) -> str:
        lines = ["texture,rep,mssim_q,mssim_raw256"]
        for i, (a, b) in enumerate(zip(self.scores, self.scores_raw256)):
            lines.append(f"{self.texture_id},{i},{a:.6f},{b:.6f}")
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        return (
            f"{self.texture_id}: mssim {self.mean:.3f} +- {self.sd:.3f} "
            f"(raw-256 {self.mean_raw256:.3f} +- {self.sd_raw256:.3f}, "
            f"{self.reps} reps, {self.wall_clock:.0f}s)"
        )


def _selectors_for(model_family: str, iterations: int) -> list[SelectorSpec]:
    return [
        SelectorSpec("gld2", iterations=iterations),
        SelectorSpec(model_family, iterations=iterations),
    ]


def inpaint_benchmark(
    texture_id: str,
    image: GreyImage,
    model_family: str = "jagstar9",
    reps: int = 200,
    levels: int = 16,
    iterations: int = 8,
    inpaint_sweeps: int = 300,
    smooth_window: int = 50,
    seed: int = 0,
    threads: int = 1,
    model: NestedModel | None = None,
    nest_cfg: NestConfig | None = None,
) -> tuple[BenchmarkReport, NestedModel]:
    """Constrained inpainting benchmark on one texture.

    The (pre-scaled per `BENCH_SCALE`) 256-level texture is uniformly
    quantized, its top half used to train a model without marginal
    potentials, and each repetition cuts a random frame from the bottom
    half, opens the centered hole, inpaints with smoothing, and scores
    MSSIM over the hole region against the ground truth, both at the
    working level count and against the 256-level original.
    """
    if texture_id not in BENCH_SCALE:
        raise ValueError(f"unknown benchmark texture {texture_id!r}")
    started = time.perf_counter()
    rng = np.random.default_rng(seed)

    scaled = bilinear_scale(image, BENCH_SCALE[texture_id])
    quant = linear_quantize(scaled, levels)
    half = quant.height // 2
    top = quant.crop(0, 0, quant.width, half)
    bottom = quant.crop(0, half, quant.width, quant.height - half)
    bottom256 = scaled.crop(0, half, scaled.width, scaled.height - half)
    if bottom.width < FRAME_SIZE or bottom.height < FRAME_SIZE:
        raise ValueError("test half smaller than the inpainting frame")

    if model is None:
        cfg = nest_cfg or NestConfig(levels=levels, with_marginal=False)
        if cfg.levels != levels or cfg.with_marginal:
            raise ValueError("nest_cfg must use the benchmark levels and no marginal")
        model, _ = nest(top, _selectors_for(model_family, iterations), cfg, rng)

    hole = centered_hole_mask(FRAME_SIZE, FRAME_SIZE, HOLE_SIZE, HOLE_SIZE) == 0
    positions = [
        (
            int(rng.integers(0, bottom.width - FRAME_SIZE + 1)),
            int(rng.integers(0, bottom.height - FRAME_SIZE + 1)),
        )
        for _ in range(reps)
    ]
    streams = rng.spawn(reps)

    def one(i: int) -> tuple[float, float]:
        x, y = positions[i]
        truth = bottom.crop(x, y, FRAME_SIZE, FRAME_SIZE)
        truth256 = bottom256.crop(x, y, FRAME_SIZE, FRAME_SIZE)
        _, filled = inpaint_with_raw(
            model, truth, (HOLE_SIZE, HOLE_SIZE), inpaint_sweeps, smooth_window,
            streams[i],
        )

        def hole_img(px, lv):
            region = px[hole].reshape(HOLE_SIZE, HOLE_SIZE)
            return GreyImage(region, lv)

        score_q = mssim(hole_img(filled.pixels, levels), hole_img(truth.pixels, levels))
        filled256 = rescale_levels(filled.pixels, levels)
        score_raw = mssim(
            hole_img(filled256, 256), hole_img(truth256.pixels, 256)
        )
        return score_q, score_raw

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(reps)))
    else:
        results = [one(i) for i in range(reps)]

    scores = [r[0] for r in results]
    scores_raw = [r[1] for r in results]
    report = BenchmarkReport(
        texture_id=texture_id,
        reps=reps,
        mean=float(np.mean(scores)),
        sd=float(np.std(scores)),
        mean_raw256=float(np.mean(scores_raw)),
        sd_raw256=float(np.std(scores_raw)),
        wall_clock=time.perf_counter() - started,
        scores=scores,
        scores_raw256=scores_raw,
    )
    return report, model
