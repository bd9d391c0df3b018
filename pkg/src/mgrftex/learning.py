"""Greedy structure learning: divergence scoring, parameter steps, nesting.

The nesting driver grows a model stage-wise through a sequence of selectors.
Each iteration draws a handful of annealed samples from the current model,
scores the selector's candidate features by the disagreement between sample
and training histograms, and appends the winners with parameters initialized
by a single second-order step.  Parameters of all potentials stay free: the
sampling runs that produce the next iteration's samples also refine them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import features as ft
from . import filterbank as fb
from .imagecore import GreyImage, split_pieces
from .mgrfmodel import NestedModel, Potential, add_potential, base_model
from .sampling import SamplerConfig, draw_csa_samples

__all__ = [
    "SelectorSpec",
    "SelectionMode",
    "NestConfig",
    "NestLog",
    "jsd",
    "gradient",
    "second_order_step",
    "piece_weights",
    "score_feature",
    "smoothed_freq",
    "nest",
]

log = logging.getLogger(__name__)

MAX_THETA_STEP = 10.0
VARIANCE_FLOOR = 1e-8


def jsd(p, q) -> float:
    """Jensen-Shannon divergence in bits; symmetric, bounded to [0, 1]."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distributions have different lengths")
    m = 0.5 * (p + q)

    def half_kl(a):
        mask = a > 0
        return float(np.sum(a[mask] * np.log2(a[mask] / m[mask])))

    return 0.5 * (half_kl(p) + half_kl(q))


def gradient(obs_stats, sample_stats) -> np.ndarray:
    """Log-likelihood gradient estimate: -h(observed) + h(model samples)."""
    obs = np.asarray(obs_stats, dtype=np.float64)
    samp = np.asarray(sample_stats, dtype=np.float64)
    if obs.shape != samp.shape:
        raise ValueError("statistic vectors misaligned")
    return samp - obs


def second_order_step(
    theta: np.ndarray,
    grad: np.ndarray,
    variance: np.ndarray,
    max_step: float = MAX_THETA_STEP,
) -> np.ndarray:
    """One likelihood-maximization step along the gradient.

    The log-likelihood Hessian is the negative histogram covariance; with a
    diagonal approximation the second-order optimum along the gradient
    direction is theta + s * grad, s = (grad . grad) / (grad^T diag(var) grad).
    The step is scaled so no component moves more than `max_step` nats.
    """
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    gg = float(grad @ grad)
    if gg == 0.0:
        return theta.copy()
    var = np.maximum(np.asarray(variance, dtype=np.float64), VARIANCE_FLOOR)
    s = gg / float(grad @ (var * grad))
    step = s * grad
    peak = float(np.max(np.abs(step)))
    if peak > max_step:
        step *= max_step / peak
    return theta + step


@dataclass(frozen=True)
class SelectionMode:
    """How candidate scores aggregate over training pieces."""

    mode: str = "maxmin"  # plain | maxmin | softmin
    alpha: float = 10.0

    def __post_init__(self):
        if self.mode not in ("plain", "maxmin", "softmin"):
            raise ValueError(f"unknown selection mode {self.mode!r}")
        if self.mode == "softmin" and self.alpha <= 0:
            raise ValueError("softmin alpha must be positive")


def piece_weights(piece_energies, alpha: float) -> np.ndarray:
    """Exponential weights favouring the minimum-likelihood (highest energy) pieces."""
    e = np.asarray(piece_energies, dtype=np.float64)
    w = np.exp(alpha * (e - e.max()))
    return w / w.sum()


def score_feature(
    sample_freq: np.ndarray,
    train_freq: np.ndarray,
    piece_freqs,
    mode: SelectionMode,
    weights=None,
) -> float:
    """Disagreement score of one candidate feature.

    plain:   JSD between the averaged sample histogram and the training one.
    maxmin:  minimum JSD over the training pieces (a candidate only scores
             high when it disagrees on every piece).
    softmin: piece JSDs averaged under `weights` (see `piece_weights`);
             uniform weights when none are given.
    """
    if mode.mode == "plain" or not len(piece_freqs):
        return jsd(sample_freq, train_freq)
    per_piece = np.array([jsd(sample_freq, pf) for pf in piece_freqs])
    if mode.mode == "maxmin":
        return float(per_piece.min())
    if weights is None:
        weights = np.full(len(per_piece), 1.0 / len(per_piece))
    return float(per_piece @ weights)


def smoothed_freq(stats: ft.HistogramStats, eps: float) -> np.ndarray:
    """Add `eps` pseudo-counts per bin and renormalize (keeps the MLE finite)."""
    counts = stats.freq * stats.clique_count + eps
    return counts / counts.sum()


@dataclass(frozen=True)
class SelectorSpec:
    """One stage of the nesting schedule."""

    family: str  # gld2 | bp5 | bp9conj | jagstar9 | jagstar13 | filters
    iterations: int = 8
    add_count: int = 0  # 0 = family default

    def __post_init__(self):
        if self.family not in DEFAULT_ADD_COUNT:
            raise ValueError(f"unknown selector family {self.family!r}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        object.__setattr__(
            self, "add_count", self.add_count or DEFAULT_ADD_COUNT[self.family]
        )


DEFAULT_ADD_COUNT = {
    "gld2": 3,
    "bp5": 2,
    "bp9conj": 1,
    "jagstar9": 1,
    "jagstar13": 1,
    "filters": 1,
}


@dataclass
class NestConfig:
    levels: int = 8
    with_marginal: bool = True
    mode: SelectionMode = field(default_factory=SelectionMode)
    smoothing_eps: float = 0.1
    feature_radius: float = ft.DEFAULT_RADIUS
    be_threshold: int | None = None
    piece_size: int = 80
    piece_overlap: int = 22
    csa: SamplerConfig = field(
        default_factory=lambda: SamplerConfig(sweeps=50, size=(100, 100), runs=4)
    )
    warmup_rounds: int = 1  # base-model fitting before the first selector
    final_rounds: int = 1

    def __post_init__(self):
        if self.csa.runs < 2:
            raise ValueError("need at least 2 sampling runs to estimate variances")


@dataclass
class NestLog:
    """Per-iteration training log; one CSV row per nesting iteration."""

    rows: list[dict] = field(default_factory=list)

    HEADER = [
        "iteration",
        "selector",
        "n_potentials",
        "max_candidate_score",
        "max_candidate_jsd",
        "selected",
        "scores",
        "model_jsds",
    ]

    def add(self, **kw):
        self.rows.append(kw)

    def to_csv(self) -> str:
        lines = [",".join(self.HEADER)]
        for row in self.rows:
            lines.append(
                ",".join(str(row.get(col, "")).replace(",", ";") for col in self.HEADER)
            )
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Candidate generation


def _describe(kind: ft.FeatureKind, offsets: ft.Offsets) -> str:
    if kind.tag == ft.FILTER:
        return f"{kind.tag}[{kind.filter_id}]"
    return f"{kind.tag}{len(offsets)}@" + ";".join(f"{dx}:{dy}" for dx, dy in offsets)


def _candidate_sort_key(kind: ft.FeatureKind, offsets: ft.Offsets):
    return (kind.tag, kind.filter_id, offsets)


def _characteristic_offsets(model: NestedModel) -> list[tuple[int, int]]:
    roots = set()
    for p in model.potentials:
        if p.kind.tag == ft.GLD and p.kind.order == 2:
            roots.add(ft.canonical_pair_offset(p.offsets[1]))
        elif p.kind.tag == ft.BP and p.kind.order == 5:
            roots.add(ft.canonical_pair_offset(p.offsets[1]))
            roots.add(ft.canonical_pair_offset(p.offsets[3]))
    roots.discard((0, 0))
    return sorted(roots)


class _SelectorState:
    """Per-selector candidate machinery, shared across its iterations."""

    def __init__(self, spec: SelectorSpec, cfg: NestConfig, training: GreyImage):
        self.spec = spec
        self.cfg = cfg
        self._filter_kinds: list[tuple[ft.FeatureKind, ft.Offsets]] | None = None
        if spec.family == "filters":
            # Freeze each filter's quantizer from the training image now.
            bank = fb.build_filter_bank()
            self._filter_kinds = []
            for f in bank:
                edges = fb.response_quantizer(f, training)
                self._filter_kinds.append(
                    (fb.to_feature_kind(f, edges), fb.footprint_offsets(f))
                )

    def candidates(self, model: NestedModel) -> list[tuple[ft.FeatureKind, ft.Offsets]]:
        fam = self.spec.family
        q = self.cfg.levels
        r = self.cfg.feature_radius
        if fam == "gld2":
            kind = ft.gld_kind(q)
            return [(kind, ((0, 0), off)) for off in ft.symmetric_pair_candidates(r)]
        if fam == "bp5":
            roots = _characteristic_offsets(model)
            if len(roots) < 2:
                raise ValueError("bp5 selector needs at least two characteristic offsets")
            kind = ft.bp_kind(5)
            return [(kind, offs) for offs in ft.combined_bp5_candidates(roots)]
        if fam == "jagstar9":
            kind = ft.bp_kind(9)
            return [(kind, offs) for offs in ft.enumerate_jagstar_candidates(9)]
        if fam == "jagstar13":
            kind = ft.bp_kind(13)
            return [(kind, offs) for offs in ft.enumerate_jagstar_candidates(13)]
        if fam == "filters":
            return list(self._filter_kinds)
        raise ValueError(fam)  # bp9conj handled separately


# ---------------------------------------------------------------------------
# Nesting driver


class _StatsCache:
    """Training-side histograms per candidate, collected once per nest run."""

    def __init__(self, training: GreyImage, pieces, eps: float):
        self.training = training
        self.pieces = pieces
        self.eps = eps
        self._full: dict = {}
        self._piece: dict = {}

    def full_freq(self, kind, offsets) -> np.ndarray:
        key = (kind, offsets)
        if key not in self._full:
            stats = ft.collect_histogram(kind, offsets, self.training)
            self._full[key] = smoothed_freq(stats, self.eps)
        return self._full[key]

    def piece_freqs(self, kind, offsets) -> list[np.ndarray]:
        key = (kind, offsets)
        if key not in self._piece:
            self._piece[key] = [
                smoothed_freq(ft.collect_histogram(kind, offsets, piece), self.eps)
                for piece in self.pieces
            ]
        return self._piece[key]


def _mean_sample_freqs(kind, offsets, samples) -> tuple[np.ndarray, np.ndarray]:
    per = np.stack(
        [ft.collect_histogram(kind, offsets, img).freq for img in samples]
    )
    return per.mean(axis=0), per.var(axis=0, ddof=1)


def _conjoined_offsets(model, samples, cache: _StatsCache, radius: float):
    """Build one 9th-order clique from the four most divergent symmetric pairs."""
    kind3 = ft.bp_kind(3)
    pairs = ft.symmetric_pair_candidates(radius)
    scored = []
    for rr in pairs:
        offs = ((0, 0), rr, (-rr[0], -rr[1]))
        train = cache.full_freq(kind3, offs)
        samp, _ = _mean_sample_freqs(kind3, offs, samples)
        scored.append((rr, jsd(train, samp)))
    scored.sort(key=lambda item: (-item[1], item[0]))
    if len(scored) < 4:
        raise ValueError("fewer than 4 symmetric pair candidates")
    head = [rr for rr, _ in scored[:3]]
    kind9 = ft.bp_kind(9)
    # Walk the 4th slot down the ranking if the fused clique already exists.
    for rr, _ in scored[3:]:
        offs = [(0, 0)]
        for root in head + [rr]:
            offs.append(root)
            offs.append((-root[0], -root[1]))
        offs = tuple(offs)
        if not model.has_key(kind9, offs):
            return offs
    raise ValueError("all conjoined candidates already in the model")


def _piece_energy_weights(model, cache: _StatsCache, alpha: float) -> np.ndarray:
    energies = []
    for piece in cache.pieces:
        e = 0.0
        for p in model.potentials:
            stats = ft.collect_histogram(p.kind, p.offsets, piece)
            e += float(p.theta @ stats.freq)
        energies.append(e)
    return piece_weights(energies, alpha)


def nest(
    training: GreyImage,
    selectors: list[SelectorSpec],
    cfg: NestConfig,
    rng: np.random.Generator,
) -> tuple[NestedModel, NestLog]:
    """Grow a nested model on a quantized training image.

    Per iteration: draw cfg.csa.runs annealed samples from the current model
    (refining all parameters as a side effect), score the selector's
    candidates, and append the top add_count new features, each with a
    stored smoothed training histogram as its target and parameters from one
    second-order step.
    """
    if training.levels != cfg.levels:
        raise ValueError("training image level count does not match the nest config")
    pieces = split_pieces(training, cfg.piece_size, cfg.piece_overlap).pieces
    cache = _StatsCache(training, pieces, cfg.smoothing_eps)

    model = base_model(cfg.levels, cfg.with_marginal)
    model = NestedModel(
        cfg.levels,
        tuple(
            replace(p, target=cache.full_freq(p.kind, p.offsets))
            for p in model.potentials
        ),
    )

    # Fit the base model's parameters before any structure is selected.
    for _ in range(cfg.warmup_rounds):
        _, theta = draw_csa_samples(model, model.targets_concat(), cfg.csa, rng)
        model = model.with_theta_concat(theta)

    logbook = NestLog()
    iteration = 1
    for spec in selectors:
        sel_state = _SelectorState(spec, cfg, training)
        for _ in range(spec.iterations):
            samples, theta = draw_csa_samples(
                model, model.targets_concat(), cfg.csa, rng
            )
            model = model.with_theta_concat(theta)

            model_jsds = []
            for p in model.potentials:
                samp, _ = _mean_sample_freqs(p.kind, p.offsets, samples)
                model_jsds.append(jsd(samp, p.target))

            weights = None
            if cfg.mode.mode == "softmin":
                weights = _piece_energy_weights(model, cache, cfg.mode.alpha)

            if spec.family == "bp9conj":
                offs = _conjoined_offsets(model, samples, cache, cfg.feature_radius)
                kind9 = ft.bp_kind(9)
                samp, _ = _mean_sample_freqs(kind9, offs, samples)
                score = score_feature(
                    samp,
                    cache.full_freq(kind9, offs),
                    cache.piece_freqs(kind9, offs),
                    cfg.mode,
                    weights,
                )
                chosen = [(kind9, offs, score)]
                max_score = score
                max_plain = jsd(samp, cache.full_freq(kind9, offs))
            else:
                scored = []
                max_plain = 0.0
                for kind, offs in sel_state.candidates(model):
                    if model.has_key(kind, offs):
                        continue
                    samp, _ = _mean_sample_freqs(kind, offs, samples)
                    full = cache.full_freq(kind, offs)
                    score = score_feature(
                        samp, full, cache.piece_freqs(kind, offs), cfg.mode, weights
                    )
                    scored.append((kind, offs, score))
                    max_plain = max(max_plain, jsd(samp, full))
                if not scored:
                    raise ValueError(f"selector {spec.family} yielded no candidates")
                scored.sort(key=lambda t: (-t[2], _candidate_sort_key(t[0], t[1])))
                max_score = scored[0][2]
                chosen = scored[: spec.add_count]

            for kind, offs, score in chosen:
                train_freq = cache.full_freq(kind, offs)
                samp, var = _mean_sample_freqs(kind, offs, samples)
                theta0 = second_order_step(
                    np.zeros(kind.bins), gradient(train_freq, samp), var
                )
                model = add_potential(
                    model,
                    Potential(kind, offs, theta0, target=train_freq, iteration=iteration),
                )

            logbook.add(
                iteration=iteration,
                selector=spec.family,
                n_potentials=len(model.potentials),
                max_candidate_score=f"{max_score:.6f}",
                max_candidate_jsd=f"{max_plain:.6f}",
                selected="|".join(_describe(k, o) for k, o, _ in chosen),
                scores="|".join(f"{s:.6f}" for _, _, s in chosen),
                model_jsds="|".join(f"{j:.6f}" for j in model_jsds),
            )
            log.info(
                "iteration %d (%s): %d potentials, max score %.4f",
                iteration, spec.family, len(model.potentials), max_score,
            )
            iteration += 1

    for _ in range(cfg.final_rounds):
        _, theta = draw_csa_samples(model, model.targets_concat(), cfg.csa, rng)
        model = model.with_theta_concat(theta)
    return model, logbook
