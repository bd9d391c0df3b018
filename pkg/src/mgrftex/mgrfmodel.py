"""Nested Markov-Gibbs random field models.

A model is an ordered list of potentials, each pairing a feature function
and clique family with a parameter vector theta (nats per clique).  The
Gibbs distribution is p(g) proportional to exp(-sum_f theta_f . counts_f(g))
where counts_f is the raw clique-bin histogram; theta is therefore a
per-clique quantity and transfers between image sizes.  `energy` reports the
size-independent normalized form theta . freq by default, and the raw Gibbs
exponent with normalized=False.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import features as ft
from ._kernels import (
    K_BE,
    K_BP,
    K_FILTER,
    K_GLC,
    K_GLD,
    K_MARGINAL,
    apply_site,
    init_state,
    site_level_energies,
)
from .imagecore import GreyImage

__all__ = [
    "Potential",
    "NestedModel",
    "ModelFormatError",
    "base_model",
    "add_potential",
    "energy",
    "local_conditional",
    "serialize_model",
    "deserialize_model",
    "ChainState",
]

_KIND_CODE = {
    ft.MARGINAL: K_MARGINAL,
    ft.GLC: K_GLC,
    ft.GLD: K_GLD,
    ft.BP: K_BP,
    ft.BE: K_BE,
    ft.FILTER: K_FILTER,
}


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Potential:
    kind: ft.FeatureKind
    offsets: ft.Offsets
    theta: np.ndarray
    target: np.ndarray | None = None  # smoothed training frequencies
    iteration: int = 0  # nesting iteration that introduced the potential

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=np.float64)
        object.__setattr__(self, "theta", th)
        if th.shape != (self.kind.bins,):
            raise ValueError("theta length must equal the feature bin count")
        if not np.all(np.isfinite(th)):
            raise ValueError("theta must be finite")
        if len(self.offsets) != self.kind.order:
            raise ValueError("offset count must equal the feature order")
        if self.target is not None:
            tg = np.asarray(self.target, dtype=np.float64)
            object.__setattr__(self, "target", tg)
            if tg.shape != (self.kind.bins,):
                raise ValueError("target length must equal the feature bin count")

    def key(self):
        return (self.kind, self.offsets)

    def with_theta(self, theta: np.ndarray) -> "Potential":
        return replace(self, theta=np.asarray(theta, dtype=np.float64))


@dataclass(frozen=True)
class NestedModel:
    levels: int
    potentials: tuple[Potential, ...] = ()

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("levels must be >= 2")

    @property
    def n_params(self) -> int:
        return sum(p.kind.bins for p in self.potentials)

    def theta_concat(self) -> np.ndarray:
        if not self.potentials:
            return np.zeros(0)
        return np.concatenate([p.theta for p in self.potentials])

    def with_theta_concat(self, vec: np.ndarray) -> "NestedModel":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise ValueError("parameter vector length mismatch")
        pots = []
        pos = 0
        for p in self.potentials:
            pots.append(p.with_theta(vec[pos : pos + p.kind.bins]))
            pos += p.kind.bins
        return NestedModel(self.levels, tuple(pots))

    def targets_concat(self) -> np.ndarray:
        parts = []
        for p in self.potentials:
            if p.target is None:
                raise ValueError("model has potentials without stored target statistics")
            parts.append(p.target)
        return np.concatenate(parts) if parts else np.zeros(0)

    def has_key(self, kind: ft.FeatureKind, offsets: ft.Offsets) -> bool:
        return any(p.key() == (kind, offsets) for p in self.potentials)

    def max_extent(self) -> int:
        if not self.potentials:
            return 0
        return max(ft.offsets_extent(p.offsets) for p in self.potentials)


def base_model(levels: int, with_marginal: bool = True) -> NestedModel:
    """Marginal (optional) plus the two nearest-neighbour difference features."""
    pots = []
    if with_marginal:
        pots.append(
            Potential(ft.marginal_kind(levels), ((0, 0),), np.zeros(levels))
        )
    gld = ft.gld_kind(levels)
    for off in ((1, 0), (0, 1)):
        pots.append(Potential(gld, ((0, 0), off), np.zeros(gld.bins)))
    return NestedModel(levels, tuple(pots))


def add_potential(model: NestedModel, p: Potential) -> NestedModel:
    """Append a potential; existing potentials and their parameters are untouched."""
    return NestedModel(model.levels, model.potentials + (p,))


def energy(model: NestedModel, img: GreyImage, normalized: bool = True) -> float:
    """Model energy of an image.

    normalized=True: sum over potentials of theta . freq (size-independent).
    normalized=False: raw Gibbs exponent, sum of theta . counts.
    """
    if img.levels != model.levels:
        raise ValueError("image level count does not match the model")
    total = 0.0
    for p in model.potentials:
        stats = ft.collect_histogram(p.kind, p.offsets, img)
        h = stats.freq if normalized else stats.freq * stats.clique_count
        total += float(p.theta @ h)
    return total


def local_conditional(model: NestedModel, img: GreyImage, site: tuple[int, int]) -> np.ndarray:
    """Conditional distribution over grey levels at one site, all else fixed."""
    x, y = site
    if not (0 <= x < img.width and 0 <= y < img.height):
        raise ValueError("site outside the lattice")
    state = ChainState(model, img)
    e = state.site_energies(x, y)
    p = np.exp(-(e - e.min()))
    return p / p.sum()


# ---------------------------------------------------------------------------
# Packed chain state


class ChainState:
    """Mutable sampling state: image plus incrementally maintained statistics.

    Owns a copy of the image.  All heavy work happens in the numba kernels;
    this wrapper only packs the model into flat arrays and exposes views.
    """

    def __init__(self, model: NestedModel, img: GreyImage, mask: np.ndarray | None = None):
        if img.levels != model.levels:
            raise ValueError("image level count does not match the model")
        if not model.potentials:
            raise ValueError("cannot sample from an empty model")
        self.model = model
        self.q = model.levels
        self.img = img.pixels.astype(np.int64)
        h, w = self.img.shape
        if mask is None:
            mask = np.zeros((h, w), dtype=np.uint8)
        else:
            mask = np.asarray(mask, dtype=np.uint8)
            if mask.shape != (h, w):
                raise ValueError("mask shape does not match the image")
        self.mask = mask

        pots = model.potentials
        n = len(pots)
        self.kind = np.array([_KIND_CODE[p.kind.tag] for p in pots], dtype=np.int64)
        self.d = np.array([p.kind.order for p in pots], dtype=np.int64)
        self.s = np.array([p.kind.bins for p in pots], dtype=np.int64)
        self.bec = np.array([p.kind.be_threshold for p in pots], dtype=np.int64)
        self.off_start = np.zeros(n + 1, dtype=np.int64)
        self.th_start = np.zeros(n + 1, dtype=np.int64)
        self.edge_start = np.zeros(n + 1, dtype=np.int64)
        off_dx, off_dy, coef, edges = [], [], [], []
        filt_idx = np.full(n, -1, dtype=np.int64)
        n_filters = 0
        for i, p in enumerate(pots):
            for dx, dy in p.offsets:
                off_dx.append(dx)
                off_dy.append(dy)
            if p.kind.tag == ft.FILTER:
                coef.extend(p.kind.coeffs)
                edges.extend(p.kind.edges)
                filt_idx[i] = n_filters
                n_filters += 1
            else:
                coef.extend([0.0] * len(p.offsets))
            self.off_start[i + 1] = len(off_dx)
            self.th_start[i + 1] = self.th_start[i] + p.kind.bins
            self.edge_start[i + 1] = len(edges)
        self.off_dx = np.array(off_dx, dtype=np.int64)
        self.off_dy = np.array(off_dy, dtype=np.int64)
        self.coef = np.array(coef, dtype=np.float64)
        self.edges = np.array(edges, dtype=np.float64)
        self.filt_idx = filt_idx
        self.theta = model.theta_concat()

        # Valid-anchor bounds per potential for this image size.
        self.axlo = np.zeros(n, dtype=np.int64)
        self.axhi = np.zeros(n, dtype=np.int64)
        self.aylo = np.zeros(n, dtype=np.int64)
        self.ayhi = np.zeros(n, dtype=np.int64)
        self.nf = np.zeros(n, dtype=np.int64)
        for i, p in enumerate(pots):
            xlo, xhi, ylo, yhi = ft.anchor_window(p.offsets, w, h)
            if xhi < xlo or yhi < ylo:
                raise ValueError(
                    f"image {w}x{h} too small for clique family {p.offsets}"
                )
            self.axlo[i], self.axhi[i] = xlo, xhi
            self.aylo[i], self.ayhi[i] = ylo, yhi
            self.nf[i] = (xhi - xlo + 1) * (yhi - ylo + 1)

        self.counts = np.zeros(int(self.th_start[-1]), dtype=np.int64)
        self.resp = np.zeros((max(n_filters, 1), h, w), dtype=np.float64)
        self._vals = np.empty(int(self.d.max()), dtype=np.int64)
        init_state(
            self.img,
            self.kind, self.d, self.s, self.bec, self.q,
            self.off_start, self.off_dx, self.off_dy, self.coef,
            self.th_start, self.edge_start, self.edges,
            self.axlo, self.axhi, self.aylo, self.ayhi,
            self.filt_idx, self.counts, self.resp,
        )

    # -- views -------------------------------------------------------------

    @property
    def shape(self):
        return self.img.shape

    def image(self) -> GreyImage:
        return GreyImage(self.img.astype(np.uint8), self.q)

    def freqs(self) -> list[np.ndarray]:
        out = []
        for i in range(len(self.model.potentials)):
            c = self.counts[self.th_start[i] : self.th_start[i + 1]]
            out.append(c / self.nf[i])
        return out

    def freq_concat(self) -> np.ndarray:
        return np.concatenate(self.freqs())

    def raw_energy(self) -> float:
        return float(self.theta @ self.counts)

    def normalized_energy(self) -> float:
        total = 0.0
        for i in range(len(self.model.potentials)):
            c = self.counts[self.th_start[i] : self.th_start[i + 1]]
            th = self.theta[self.th_start[i] : self.th_start[i + 1]]
            total += float(th @ c) / self.nf[i]
        return total

    def set_theta(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != self.theta.shape:
            raise ValueError("parameter vector length mismatch")
        self.theta[:] = vec

    def current_model(self) -> NestedModel:
        return self.model.with_theta_concat(self.theta.copy())

    # -- mutation ----------------------------------------------------------

    def site_energies(self, x: int, y: int) -> np.ndarray:
        evec = np.empty(self.q, dtype=np.float64)
        site_level_energies(
            self.img, x, y,
            self.kind, self.d, self.s, self.bec, self.q,
            self.off_start, self.off_dx, self.off_dy, self.coef,
            self.th_start, self.theta, self.edge_start, self.edges,
            self.axlo, self.axhi, self.aylo, self.ayhi,
            self.filt_idx, self.resp,
            evec, self._vals,
        )
        return evec

    def set_pixel(self, x: int, y: int, value: int) -> None:
        if not 0 <= value < self.q:
            raise ValueError("value outside grey-level range")
        apply_site(
            self.img, x, y, value,
            self.kind, self.d, self.s, self.bec, self.q,
            self.off_start, self.off_dx, self.off_dy, self.coef,
            self.th_start, self.edge_start, self.edges,
            self.axlo, self.axhi, self.aylo, self.ayhi,
            self.filt_idx, self.counts, self.resp,
            self._vals,
        )

    def kernel_args(self):
        """Positional argument block shared by the sweep kernels."""
        return (
            self.kind, self.d, self.s, self.bec, self.q,
            self.off_start, self.off_dx, self.off_dy, self.coef,
            self.th_start, self.theta, self.edge_start, self.edges,
            self.axlo, self.axhi, self.aylo, self.ayhi,
            self.filt_idx, self.counts, self.resp,
        )


# ---------------------------------------------------------------------------
# Serialization: versioned, diff-able text with round-trip exact floats.

_FORMAT_HEADER = "mgrftex-model v1"


def _fmt_floats(vec) -> str:
    return ",".join(repr(float(v)) for v in vec)


def _parse_floats(text: str) -> np.ndarray:
    if text == "":
        return np.zeros(0)
    return np.array([float(tok) for tok in text.split(",")], dtype=np.float64)


def serialize_model(model: NestedModel) -> str:
    lines = [_FORMAT_HEADER, f"levels {model.levels}"]
    for p in model.potentials:
        fields = [
            f"tag={p.kind.tag}",
            f"iter={p.iteration}",
            f"d={p.kind.order}",
            f"s={p.kind.bins}",
        ]
        if p.kind.tag == ft.BE:
            fields.append(f"c={p.kind.be_threshold}")
        if p.kind.tag == ft.FILTER:
            fields.append(f"filter={p.kind.filter_id}")
            fields.append(f"coeffs={_fmt_floats(p.kind.coeffs)}")
            fields.append(f"edges={_fmt_floats(p.kind.edges)}")
        fields.append("offsets=" + "|".join(f"{dx}:{dy}" for dx, dy in p.offsets))
        fields.append("theta=" + _fmt_floats(p.theta))
        if p.target is not None:
            fields.append("target=" + _fmt_floats(p.target))
        lines.append("potential " + " ".join(fields))
    return "\n".join(lines) + "\n"


def deserialize_model(text: str) -> NestedModel:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != _FORMAT_HEADER:
        raise ModelFormatError(f"bad or missing header; expected {_FORMAT_HEADER!r}")
    if len(lines) < 2 or not lines[1].startswith("levels "):
        raise ModelFormatError("missing levels line")
    try:
        levels = int(lines[1].split()[1])
    except (IndexError, ValueError) as exc:
        raise ModelFormatError("malformed levels line") from exc

    pots = []
    for ln in lines[2:]:
        if not ln.startswith("potential "):
            raise ModelFormatError(f"unexpected line: {ln[:40]!r}")
        kv = {}
        for tok in ln[len("potential "):].split():
            if "=" not in tok:
                raise ModelFormatError(f"malformed field {tok!r}")
            k, v = tok.split("=", 1)
            kv[k] = v
        try:
            tag = kv["tag"]
            d = int(kv["d"])
            s = int(kv["s"])
            offsets = tuple(
                (int(a), int(b))
                for a, b in (pair.split(":") for pair in kv["offsets"].split("|"))
            )
            theta = _parse_floats(kv["theta"])
            target = _parse_floats(kv["target"]) if "target" in kv else None
            iteration = int(kv.get("iter", "0"))
        except (KeyError, ValueError) as exc:
            raise ModelFormatError(f"malformed potential line: {ln[:60]!r}") from exc

        if tag == ft.MARGINAL:
            kind = ft.marginal_kind(levels)
        elif tag == ft.GLC:
            kind = ft.glc_kind(d, levels)
        elif tag == ft.GLD:
            kind = ft.gld_kind(levels)
        elif tag == ft.BP:
            kind = ft.bp_kind(d)
        elif tag == ft.BE:
            kind = ft.be_kind(d, int(kv.get("c", "0")))
        elif tag == ft.FILTER:
            kind = ft.filter_kind(
                kv.get("filter", ""), _parse_floats(kv.get("coeffs", "")),
                _parse_floats(kv.get("edges", "")),
            )
        else:
            raise ModelFormatError(f"unknown feature tag {tag!r}")
        if kind.bins != s or kind.order != d:
            raise ModelFormatError(
                f"inconsistent shape for tag {tag}: expected d={kind.order} s={kind.bins}"
            )
        pots.append(Potential(kind, offsets, theta, target=target, iteration=iteration))
    return NestedModel(levels, tuple(pots))
