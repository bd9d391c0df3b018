"""Gibbs sweeps, controllable simulated annealing, synthesis, inpainting.

Sampling alternates raster-order single-site Gibbs sweeps with elementwise
parameter updates proportional to the statistic error (sample frequencies
minus target frequencies).  Two step-size schedules are provided: a
Robbins-Monro sequence 15/(15+t), and per-parameter adaptive gains that grow
while successive error components agree in sign and shrink when they
disagree.  Every stochastic operation is a pure function of its inputs and
the supplied random generator.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .imagecore import GreyImage
from .mgrfmodel import ChainState, NestedModel

__all__ = [
    "SamplerConfig",
    "StepState",
    "rm_step_size",
    "gibbs_sweep",
    "csa_run",
    "acsa_run",
    "draw_csa_samples",
    "synthesize",
    "inpaint",
    "noise_image",
]

RM_HALF_LIFE = 15.0
ACSA_GAIN_UP = 1.02
ACSA_GAIN_DOWN = 1.0 / 1.02
ACSA_GAIN_MIN = 1e-4
ACSA_GAIN_MAX = 1e2


@dataclass
class SamplerConfig:
    """Knobs shared by the annealing runs."""

    sweeps: int = 50
    size: tuple[int, int] = (100, 100)  # (width, height)
    init: str = "noise"  # noise | image
    init_image: GreyImage | None = None
    mask: np.ndarray | None = None
    seed: int = 0
    runs: int = 4
    variant: str = "acsa"  # acsa | rm
    threads: int = 1

    def __post_init__(self):
        if self.sweeps < 1:
            raise ValueError("sweeps must be >= 1")
        if self.init not in ("noise", "image"):
            raise ValueError(f"unknown init mode {self.init!r}")
        if self.variant not in ("acsa", "rm"):
            raise ValueError(f"unknown annealing variant {self.variant!r}")


@dataclass
class StepState:
    """Per-parameter step sizes plus the sign memory for adaptive gains."""

    t: int
    lam: np.ndarray
    prev_sign: np.ndarray

    @classmethod
    def initial(cls, n_params: int) -> "StepState":
        return cls(0, np.ones(n_params), np.zeros(n_params))


def rm_step_size(t: int) -> float:
    return RM_HALF_LIFE / (RM_HALF_LIFE + t)


def adaptive_gain_update(state: StepState, grad: np.ndarray) -> np.ndarray:
    """Advance the gain vector: grow on sign agreement, shrink on disagreement."""
    sign = np.sign(grad)
    agree = state.prev_sign * sign
    state.lam[agree > 0] *= ACSA_GAIN_UP
    state.lam[agree < 0] *= ACSA_GAIN_DOWN
    np.clip(state.lam, ACSA_GAIN_MIN, ACSA_GAIN_MAX, out=state.lam)
    state.prev_sign = sign
    state.t += 1
    return state.lam


def noise_image(rng: np.random.Generator, levels: int, size: tuple[int, int]) -> GreyImage:
    w, h = size
    return GreyImage(rng.integers(0, levels, size=(h, w), dtype=np.uint8), levels)


def gibbs_sweep(
    model: NestedModel,
    img: GreyImage,
    mask: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
) -> GreyImage:
    """One raster-order sweep over `img`, updated in place and returned."""
    rng = rng or np.random.default_rng()
    state = ChainState(model, img, mask)
    _sweep(state, rng)
    img.pixels[...] = state.img.astype(np.uint8)
    return img


def _sweep(state: ChainState, rng: np.random.Generator) -> None:
    h, w = state.shape
    uniforms = rng.random(w * h)
    _kernels.gibbs_sweep(state.img, state.mask, uniforms, *state.kernel_args())


def _anneal(
    state: ChainState,
    target: np.ndarray,
    sweeps: int,
    rng: np.random.Generator,
    variant: str,
) -> np.ndarray:
    """Alternate sweeps with theta updates; returns the final parameters."""
    theta = state.theta.copy()
    if target.shape != theta.shape:
        raise ValueError("target statistics misaligned with model parameters")
    step = StepState.initial(theta.size)
    for t in range(sweeps):
        _sweep(state, rng)
        grad = state.freq_concat() - target
        if variant == "rm":
            lam = rm_step_size(t)
            theta += lam * grad
        else:
            lam = adaptive_gain_update(step, grad)
            theta += lam * grad
        state.set_theta(theta)
    return theta


def _make_init(
    model: NestedModel, cfg: SamplerConfig, rng: np.random.Generator
) -> GreyImage:
    if cfg.init == "image":
        if cfg.init_image is None:
            raise ValueError("init mode 'image' requires init_image")
        return cfg.init_image.copy()
    return noise_image(rng, model.levels, cfg.size)


def csa_run(
    model: NestedModel, target_stats, cfg: SamplerConfig, rng: np.random.Generator | None = None
) -> tuple[GreyImage, np.ndarray]:
    """Robbins-Monro annealing toward the target statistics."""
    rng = rng or np.random.default_rng(cfg.seed)
    state = ChainState(model, _make_init(model, cfg, rng), cfg.mask)
    theta = _anneal(state, _concat_targets(target_stats), cfg.sweeps, rng, "rm")
    return state.image(), theta


def acsa_run(
    model: NestedModel, target_stats, cfg: SamplerConfig, rng: np.random.Generator | None = None
) -> tuple[GreyImage, np.ndarray]:
    """Annealing with per-parameter adaptive gains instead of Robbins-Monro."""
    rng = rng or np.random.default_rng(cfg.seed)
    state = ChainState(model, _make_init(model, cfg, rng), cfg.mask)
    theta = _anneal(state, _concat_targets(target_stats), cfg.sweeps, rng, "acsa")
    return state.image(), theta


def _concat_targets(target_stats) -> np.ndarray:
    if isinstance(target_stats, np.ndarray):
        return target_stats
    parts = [np.asarray(getattr(t, "freq", t), dtype=np.float64) for t in target_stats]
    return np.concatenate(parts)


def draw_csa_samples(
    model: NestedModel,
    target: np.ndarray,
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> tuple[list[GreyImage], np.ndarray]:
    """cfg.runs independent annealing runs from noise; returns the sample
    images and the parameter vectors averaged across runs."""
    seeds = rng.spawn(cfg.runs)

    def one(i: int) -> tuple[GreyImage, np.ndarray]:
        run_rng = seeds[i]
        state = ChainState(model, _make_init(model, cfg, run_rng), None)
        theta = _anneal(state, target, cfg.sweeps, run_rng, cfg.variant)
        return state.image(), theta

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(one, range(cfg.runs)))
    else:
        results = [one(i) for i in range(cfg.runs)]
    images = [r[0] for r in results]
    thetas = np.stack([r[1] for r in results])
    return images, thetas.mean(axis=0)


def synthesize(
    model: NestedModel,
    out_size: tuple[int, int] = (180, 180),
    sweeps: int = 300,
    seed_image: GreyImage | None = None,
    seed_piece: int = 80,
    rng: np.random.Generator | None = None,
    adapt_theta: bool = True,
) -> GreyImage:
    """Seed-grown texture synthesis.

    Allocates the output plus a margin equal to the largest clique extent
    (at most 65 px), fills it with noise, plants a random piece of the
    training image at the centre, then runs annealing (theta free, toward
    the stored target statistics) or plain Gibbs sweeps with frozen theta.
    The margins are trimmed from the result.
    """
    rng = rng or np.random.default_rng()
    w, h = out_size
    margin = min(model.max_extent(), 65)
    full = noise_image(rng, model.levels, (w + 2 * margin, h + 2 * margin))

    if seed_image is not None:
        pw = min(seed_piece, seed_image.width, full.width)
        ph = min(seed_piece, seed_image.height, full.height)
        sx = int(rng.integers(0, seed_image.width - pw + 1))
        sy = int(rng.integers(0, seed_image.height - ph + 1))
        cx = (full.width - pw) // 2
        cy = (full.height - ph) // 2
        full.pixels[cy : cy + ph, cx : cx + pw] = seed_image.pixels[
            sy : sy + ph, sx : sx + pw
        ]

    state = ChainState(model, full, None)
    if adapt_theta:
        _anneal(state, model.targets_concat(), sweeps, rng, "acsa")
    else:
        for _ in range(sweeps):
            _sweep(state, rng)
    out = state.img[margin : margin + h, margin : margin + w]
    return GreyImage(out.astype(np.uint8), model.levels)


def centered_hole_mask(
    frame_w: int, frame_h: int, hole_w: int, hole_h: int
) -> np.ndarray:
    """Frozen-site mask: 1 on the frame, 0 inside the centered hole."""
    if hole_w > frame_w or hole_h > frame_h:
        raise ValueError("hole does not fit inside the frame")
    mask = np.ones((frame_h, frame_w), dtype=np.uint8)
    x0 = (frame_w - hole_w) // 2
    y0 = (frame_h - hole_h) // 2
    mask[y0 : y0 + hole_h, x0 : x0 + hole_w] = 0
    return mask


def inpaint(
    model: NestedModel,
    frame: GreyImage,
    hole_size: tuple[int, int] = (54, 54),
    sweeps: int = 300,
    smooth_window: int = 50,
    rng: np.random.Generator | None = None,
) -> GreyImage:
    """Fill a centered hole by Gibbs sampling with frozen parameters.

    The hole is initialized to noise; frame pixels never change.  The result
    averages the last `smooth_window` sweeps per pixel and rounds once
    (window 1 returns the final raw sample).
    """
    _, smoothed = inpaint_with_raw(model, frame, hole_size, sweeps, smooth_window, rng)
    return smoothed


def inpaint_with_raw(
    model: NestedModel,
    frame: GreyImage,
    hole_size: tuple[int, int] = (54, 54),
    sweeps: int = 300,
    smooth_window: int = 50,
    rng: np.random.Generator | None = None,
) -> tuple[GreyImage, GreyImage]:
    """Like `inpaint` but also returns the final raw sample."""
    rng = rng or np.random.default_rng()
    if smooth_window < 1 or smooth_window > sweeps:
        raise ValueError("smooth_window must be in [1, sweeps]")
    mask = centered_hole_mask(frame.width, frame.height, *hole_size)
    work = frame.copy()
    noise = noise_image(rng, model.levels, (frame.width, frame.height))
    work.pixels[mask == 0] = noise.pixels[mask == 0]

    state = ChainState(model, work, mask)
    acc = np.zeros(state.shape, dtype=np.float64)
    for t in range(sweeps):
        _sweep(state, rng)
        if t >= sweeps - smooth_window:
            acc += state.img
    raw = state.image()
    avg = np.floor(acc / smooth_window + 0.5)
    smoothed_px = raw.pixels.copy()
    hole = mask == 0
    smoothed_px[hole] = np.clip(avg[hole], 0, model.levels - 1).astype(np.uint8)
    return raw, GreyImage(smoothed_px, model.levels)
