"""Feature functions, clique-family geometry, and histogram collection.

A clique family is the set of translations of one offset pattern across the
lattice.  A feature maps the grey levels of a clique to a bin index; its
image-wide normalized histogram is the sufficient statistic the models are
built on.  Feature kinds:

  marginal  single-pixel grey level, Q bins
  glc       d-ary grey level co-occurrence, Q^d bins
  gld       pairwise grey level difference, 2Q-1 bins
  bp        binary pattern: thresholds surrounding pixels against the first
            pixel, 2^(d-1) bins
  be        binary equality: like bp but tests |x0 - xi| <= c
  filter    linear filter response over the offset footprint, quantized by
            fixed bin edges (two overflow bins)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imagecore import GreyImage

__all__ = [
    "Offsets",
    "FeatureKind",
    "HistogramStats",
    "make_offsets",
    "offsets_extent",
    "marginal_kind",
    "glc_kind",
    "gld_kind",
    "bp_kind",
    "be_kind",
    "filter_kind",
    "default_be_threshold",
    "eval_feature",
    "collect_histogram",
    "jag_star_offsets",
    "enumerate_jagstar_candidates",
    "combined_bp5_candidates",
    "conjoin_bp9",
    "canonical_pair_offset",
]

Offsets = tuple[tuple[int, int], ...]

MARGINAL = "marginal"
GLC = "glc"
GLD = "gld"
BP = "bp"
BE = "be"
FILTER = "filter"

DEFAULT_RADIUS = 40.0


def make_offsets(pairs, radius: float = DEFAULT_RADIUS) -> Offsets:
    """Validate and freeze an offset list: (0,0) first, all within `radius`."""
    offs = tuple((int(dx), int(dy)) for dx, dy in pairs)
    if not offs or offs[0] != (0, 0):
        raise ValueError("offset list must start with (0, 0)")
    for dx, dy in offs:
        if math.hypot(dx, dy) > radius + 1e-9:
            raise ValueError(f"offset ({dx}, {dy}) outside radius {radius}")
    return offs


def offsets_extent(offsets: Offsets) -> int:
    """Chebyshev extent of the pattern (max |dx| or |dy|)."""
    return max(max(abs(dx), abs(dy)) for dx, dy in offsets)


@dataclass(frozen=True)
class FeatureKind:
    tag: str
    order: int
    bins: int
    q: int = 0
    be_threshold: int = 0
    filter_id: str = ""
    coeffs: tuple = ()
    edges: tuple = ()

    def __post_init__(self):
        if self.tag not in (MARGINAL, GLC, GLD, BP, BE, FILTER):
            raise ValueError(f"unknown feature tag {self.tag!r}")


def marginal_kind(q: int) -> FeatureKind:
    return FeatureKind(MARGINAL, 1, q, q=q)


def glc_kind(d: int, q: int) -> FeatureKind:
    return FeatureKind(GLC, d, q**d, q=q)


def gld_kind(q: int) -> FeatureKind:
    return FeatureKind(GLD, 2, 2 * q - 1, q=q)


def bp_kind(d: int) -> FeatureKind:
    return FeatureKind(BP, d, 2 ** (d - 1))


def be_kind(d: int, threshold: int) -> FeatureKind:
    return FeatureKind(BE, d, 2 ** (d - 1), be_threshold=threshold)


def filter_kind(filter_id: str, coeffs, edges) -> FeatureKind:
    coeffs = tuple(float(c) for c in coeffs)
    edges = tuple(float(e) for e in edges)
    return FeatureKind(
        FILTER, len(coeffs), len(edges) + 1, filter_id=filter_id, coeffs=coeffs, edges=edges
    )


def default_be_threshold(q: int) -> int:
    """Equality tolerance scaled to the grey-level range."""
    return max(1, round((q - 1) / 8))


@dataclass(frozen=True)
class HistogramStats:
    """Normalized bin frequencies plus the number of contributing cliques."""

    freq: np.ndarray
    clique_count: int

    def __post_init__(self):
        f = np.asarray(self.freq, dtype=np.float64)
        object.__setattr__(self, "freq", f)
        if self.clique_count < 0:
            raise ValueError("clique_count must be >= 0")
        if f.min() < 0 or abs(f.sum() - 1.0) > 1e-9:
            raise ValueError("freq must be a normalized distribution")

    @classmethod
    def from_counts(cls, counts: np.ndarray) -> "HistogramStats":
        counts = np.asarray(counts, dtype=np.float64)
        total = counts.sum()
        if total <= 0:
            raise ValueError("empty histogram")
        return cls(counts / total, int(round(total)))


def eval_feature(kind: FeatureKind, values) -> int:
    """Bin index of one clique's grey levels, in [0, kind.bins)."""
    tag = kind.tag
    if tag == MARGINAL:
        return int(values[0])
    if tag == GLC:
        acc = 0
        for i, v in enumerate(values):
            acc += int(v) * kind.q**i
        return acc
    if tag == GLD:
        return int(values[1]) - int(values[0]) + kind.q - 1
    if tag == BP:
        x0 = int(values[0])
        acc = 0
        for i in range(1, len(values)):
            if x0 < int(values[i]):
                acc += 1 << (i - 1)
        return acc
    if tag == BE:
        x0 = int(values[0])
        acc = 0
        for i in range(1, len(values)):
            if abs(x0 - int(values[i])) <= kind.be_threshold:
                acc += 1 << (i - 1)
        return acc
    if tag == FILTER:
        resp = 0.0
        for c, v in zip(kind.coeffs, values):
            resp += c * float(v)
        return quantize_response(resp, kind.edges)
    raise ValueError(f"unknown feature tag {tag!r}")


def quantize_response(resp: float, edges) -> int:
    """Number of edges <= resp; bin 0 and bin len(edges) act as overflow bins."""
    b = 0
    for e in edges:
        if resp >= e:
            b += 1
        else:
            break
    return b


def anchor_window(offsets: Offsets, width: int, height: int):
    """Inclusive anchor ranges such that every clique member stays inside."""
    dxs = [o[0] for o in offsets]
    dys = [o[1] for o in offsets]
    x_lo, x_hi = max(0, -min(dxs)), width - 1 - max(0, max(dxs))
    y_lo, y_hi = max(0, -min(dys)), height - 1 - max(0, max(dys))
    return x_lo, x_hi, y_lo, y_hi


def _stacked_values(offsets: Offsets, img: GreyImage) -> np.ndarray:
    """(d, n_anchors) int array of clique member values, anchors raveled."""
    x_lo, x_hi, y_lo, y_hi = anchor_window(offsets, img.width, img.height)
    if x_hi < x_lo or y_hi < y_lo:
        raise ValueError("no clique of this family fits inside the image")
    px = img.pixels.astype(np.int64)
    cols = [
        px[y_lo + dy : y_hi + 1 + dy, x_lo + dx : x_hi + 1 + dx].ravel()
        for dx, dy in offsets
    ]
    return np.stack(cols)


def bin_values(kind: FeatureKind, vals: np.ndarray) -> np.ndarray:
    """Vectorized bin indices for stacked clique values (d, n)."""
    tag = kind.tag
    if tag == MARGINAL:
        return vals[0]
    if tag == GLC:
        weights = kind.q ** np.arange(vals.shape[0], dtype=np.int64)
        return weights @ vals
    if tag == GLD:
        return vals[1] - vals[0] + kind.q - 1
    if tag == BP:
        bits = (vals[0] < vals[1:]).astype(np.int64)
        weights = 1 << np.arange(vals.shape[0] - 1, dtype=np.int64)
        return weights @ bits
    if tag == BE:
        bits = (np.abs(vals[0] - vals[1:]) <= kind.be_threshold).astype(np.int64)
        weights = 1 << np.arange(vals.shape[0] - 1, dtype=np.int64)
        return weights @ bits
    if tag == FILTER:
        resp = np.asarray(kind.coeffs, dtype=np.float64) @ vals
        return np.searchsorted(np.asarray(kind.edges), resp, side="right")
    raise ValueError(f"unknown feature tag {tag!r}")


def collect_histogram(kind: FeatureKind, offsets: Offsets, img: GreyImage) -> HistogramStats:
    """Histogram of the feature over every clique fully inside the lattice."""
    if len(offsets) != kind.order:
        raise ValueError("offset list length does not match feature order")
    if kind.tag == FILTER:
        return _collect_filter_histogram(kind, offsets, img)
    vals = _stacked_values(offsets, img)
    bins = bin_values(kind, vals)
    counts = np.bincount(bins, minlength=kind.bins)
    return HistogramStats.from_counts(counts)


def _collect_filter_histogram(kind: FeatureKind, offsets: Offsets, img: GreyImage) -> HistogramStats:
    # Correlate with the (possibly sparse) footprint via a dense kernel grid;
    # avoids stacking one image view per footprint member.
    from scipy.signal import fftconvolve

    x_lo, x_hi, y_lo, y_hi = anchor_window(offsets, img.width, img.height)
    if x_hi < x_lo or y_hi < y_lo:
        raise ValueError("no clique of this family fits inside the image")
    dxs = [o[0] for o in offsets]
    dys = [o[1] for o in offsets]
    kx0, ky0 = min(dxs), min(dys)
    grid = np.zeros((max(dys) - ky0 + 1, max(dxs) - kx0 + 1))
    for (dx, dy), c in zip(offsets, kind.coeffs):
        grid[dy - ky0, dx - kx0] += c
    resp = fftconvolve(img.pixels.astype(np.float64), grid[::-1, ::-1], mode="valid")
    bins = np.searchsorted(np.asarray(kind.edges), resp.ravel(), side="right")
    counts = np.bincount(bins, minlength=kind.bins)
    return HistogramStats.from_counts(counts)


# ---------------------------------------------------------------------------
# Offset pattern constructors


def jag_star_offsets(k: int, d0: float, d1: float, phi: float) -> Offsets:
    """k-1 points alternating between circles of radii d0, d1, evenly spaced.

    Point i sits at angle 2*pi*i/(k-1) + phi on circle d0 (i even) or d1
    (i odd), rounded to integer coordinates.  Duplicate offsets after
    rounding are retained so the clique keeps arity k.
    """
    pts = [(0, 0)]
    n = k - 1
    for i in range(n):
        r = d0 if i % 2 == 0 else d1
        ang = 2.0 * math.pi * i / n + phi
        pts.append((round(r * math.cos(ang)), round(r * math.sin(ang))))
    return tuple(pts)


# Default jag-star search grid: integer radius pairs 1..20 (unordered), and
# rotations stepped by one period / 16.  The pattern set has rotational period
# 2*(2*pi/(k-1)) when the two radii differ (rotating by one angular spacing
# swaps the circles) and 2*pi/(k-1) when they coincide.
JAGSTAR_MAX_RADIUS = 20
JAGSTAR_PHI_STEPS = 16


def enumerate_jagstar_candidates(k: int) -> list[Offsets]:
    """Deterministic dense enumeration of jag-star patterns, duplicates removed."""
    if k not in (9, 13):
        raise ValueError("supported jag-star orders are 9 and 13")
    spacing = 2.0 * math.pi / (k - 1)
    seen = set()
    out = []
    for d0 in range(1, JAGSTAR_MAX_RADIUS + 1):
        for d1 in range(d0, JAGSTAR_MAX_RADIUS + 1):
            period = spacing if d0 == d1 else 2.0 * spacing
            for j in range(JAGSTAR_PHI_STEPS):
                phi = period * j / JAGSTAR_PHI_STEPS
                offs = jag_star_offsets(k, d0, d1, phi)
                if offs not in seen:
                    seen.add(offs)
                    out.append(offs)
    return out


def canonical_pair_offset(r: tuple[int, int]) -> tuple[int, int]:
    """Canonical representative of the mirrored pair {r, -r}."""
    dx, dy = r
    if dy > 0 or (dy == 0 and dx > 0):
        return (dx, dy)
    return (-dx, -dy)


def _halve(r: tuple[int, int]) -> tuple[int, int]:
    # Round toward zero componentwise.
    return (int(r[0] / 2), int(r[1] / 2))


def combined_bp5_candidates(selected) -> list[Offsets]:
    """5-pixel binary patterns composed from pairs of characteristic offsets.

    For each unordered pair of distinct offsets and each per-offset choice of
    the mirrored pair (r, -r) or its halved version, emits the offset list
    ((0,0), a, -a, b, -b).  Duplicates after rounding are emitted once.
    """
    roots = sorted({canonical_pair_offset(r) for r in selected})
    if not roots:
        raise ValueError("no characteristic offsets to combine")
    seen = set()
    out = []
    for i in range(len(roots)):
        for j in range(i + 1, len(roots)):
            for half_a in (False, True):
                for half_b in (False, True):
                    a = _halve(roots[i]) if half_a else roots[i]
                    b = _halve(roots[j]) if half_b else roots[j]
                    offs = ((0, 0), a, (-a[0], -a[1]), b, (-b[0], -b[1]))
                    if offs not in seen:
                        seen.add(offs)
                        out.append(offs)
    return out


def symmetric_pair_candidates(radius: float = DEFAULT_RADIUS) -> list[tuple[int, int]]:
    """Canonical offsets r with 0 < |r| <= radius, one per mirrored pair {r, -r}."""
    rmax = int(radius)
    out = []
    for dy in range(0, rmax + 1):
        for dx in range(-rmax, rmax + 1):
            if dy == 0 and dx <= 0:
                continue
            if math.hypot(dx, dy) <= radius + 1e-9:
                out.append((dx, dy))
    return out


def conjoin_bp9(candidates, training_stats, sample_stats) -> Offsets:
    """Fuse the four most divergent symmetric 3rd-order binary patterns.

    `candidates` are the pair offsets r of BP features over ((0,0), r, -r);
    the four with maximal Jensen-Shannon divergence between training and
    sample histograms (distinct r, ties broken by offset order) are merged
    into one 9-pixel clique ((0,0), r1, -r1, ..., r4, -r4).
    """
    from .learning import jsd

    cands = list(candidates)
    if len(cands) < 4:
        raise ValueError("need at least 4 pair candidates to conjoin")
    if not (len(cands) == len(training_stats) == len(sample_stats)):
        raise ValueError("candidate and statistics lists misaligned")
    scored = sorted(
        zip(cands, training_stats, sample_stats),
        key=lambda item: (-jsd(item[1].freq, item[2].freq), item[0]),
    )
    offs = [(0, 0)]
    for r, _, _ in scored[:4]:
        offs.append(r)
        offs.append((-r[0], -r[1]))
    return tuple(offs)
