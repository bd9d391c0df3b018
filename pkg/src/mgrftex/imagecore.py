"""Grey-level images: file I/O, CLAHE quantization, training-piece extraction.

Images are rectangular lattices of integer grey levels in [0, Q). Loading
always yields Q=256; `clahe_quantize` reduces to the working level count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image

__all__ = [
    "GreyImage",
    "PieceSet",
    "load_image",
    "save_image",
    "rescale_levels",
    "clahe_quantize",
    "linear_quantize",
    "split_pieces",
]


@dataclass(frozen=True)
class GreyImage:
    """A width x height lattice of grey levels in [0, levels)."""

    pixels: np.ndarray  # (height, width) uint8
    levels: int

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        object.__setattr__(self, "pixels", px)
        if px.ndim != 2 or px.size == 0:
            raise ValueError("pixels must be a non-empty 2-D array")
        if not 2 <= self.levels <= 256:
            raise ValueError(f"levels must be in [2, 256], got {self.levels}")
        if int(px.max()) >= self.levels:
            raise ValueError(
                f"pixel value {int(px.max())} out of range for {self.levels} levels"
            )

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def copy(self) -> "GreyImage":
        return GreyImage(self.pixels.copy(), self.levels)

    def crop(self, x: int, y: int, w: int, h: int) -> "GreyImage":
        if x < 0 or y < 0 or x + w > self.width or y + h > self.height:
            raise ValueError("crop window outside image")
        return GreyImage(self.pixels[y : y + h, x : x + w].copy(), self.levels)


@dataclass(frozen=True)
class PieceSet:
    """Overlapping training pieces cut from a parent image."""

    pieces: list[GreyImage]
    origins: list[tuple[int, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pieces)


def load_image(path) -> GreyImage:
    """Load an 8-bit greyscale PGM (P5) or PNG file; result has 256 levels."""
    path = str(path)
    if path.lower().endswith((".pgm", ".pnm")):
        return _load_pgm(path)
    if path.lower().endswith(".png"):
        return _load_png(path)
    raise ValueError(f"unsupported format: {path} (expected .pgm or .png)")


def _load_pgm(path: str) -> GreyImage:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise OSError(f"unreadable file: {path}: {exc}") from exc
    if not data.startswith(b"P5"):
        raise ValueError(f"unsupported format: {path} is not binary PGM (P5)")
    # Header: magic, width, height, maxval, one whitespace, then raster.
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"unreadable file: {path}: truncated header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace before raster
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ValueError(f"unreadable file: {path}: bad header") from exc
    if maxval > 255:
        raise ValueError(f"unsupported format: {path}: 16-bit PGM not supported")
    raster = data[pos : pos + width * height]
    if len(raster) != width * height:
        raise ValueError(f"unreadable file: {path}: truncated raster")
    px = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return GreyImage(px.copy(), 256)


def _load_png(path: str) -> GreyImage:
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise OSError(f"unreadable file: {path}: {exc}") from exc
    if img.mode != "L":
        raise ValueError(
            f"unsupported format: {path} has mode {img.mode}, expected 8-bit greyscale"
        )
    return GreyImage(np.asarray(img, dtype=np.uint8), 256)


def rescale_levels(values: np.ndarray, levels: int) -> np.ndarray:
    """Map level q in [0, levels) to the byte round(q * 255 / (levels - 1))."""
    scaled = np.rint(np.asarray(values, dtype=np.float64) * (255.0 / (levels - 1)))
    return scaled.astype(np.uint8)


def save_image(img: GreyImage, path, rescale: bool = False) -> None:
    """Write PGM (P5) or PNG. With `rescale`, levels are stretched to 0..255."""
    path = str(path)
    px = rescale_levels(img.pixels, img.levels) if rescale else img.pixels
    if path.lower().endswith((".pgm", ".pnm")):
        header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
        try:
            with open(path, "wb") as fh:
                fh.write(header)
                fh.write(px.tobytes())
        except OSError as exc:
            raise OSError(f"unwritable path: {path}: {exc}") from exc
    elif path.lower().endswith(".png"):
        try:
            Image.fromarray(px, mode="L").save(path)
        except OSError as exc:
            raise OSError(f"unwritable path: {path}: {exc}") from exc
    else:
        raise ValueError(f"unsupported format: {path} (expected .pgm or .png)")


def _clip_histogram(hist: np.ndarray, cap: float) -> np.ndarray:
    """Clip bins at `cap` and spread the excess uniformly, re-clipping as needed."""
    hist = hist.astype(np.float64)
    for _ in range(16):
        excess = np.sum(np.maximum(hist - cap, 0.0))
        if excess <= 1e-9:
            break
        hist = np.minimum(hist, cap)
        hist += excess / len(hist)
    return hist


def clahe_quantize(
    img: GreyImage, levels: int, tile: int = 16, clip: float = 0.03
) -> GreyImage:
    """Contrast-limited adaptive histogram equalization onto `levels` grey levels.

    Tiles are `tile` x `tile` pixels anchored at multiples of `tile`; a final
    partial tile is clamped to the image edge on each axis.  Per-tile 256-bin
    histograms are clipped at `clip` * (pixels in tile) per bin, the clipped
    mass redistributed uniformly, and the tile CDFs blended bilinearly between
    tile centers (clamped to the nearest tile outside the center hull).
    Output level = round((levels - 1) * blended CDF).
    """
    if levels < 2:
        raise ValueError(f"levels must be >= 2, got {levels}")
    if img.levels != 256:
        raise ValueError("clahe_quantize expects a 256-level input image")
    h, w = img.pixels.shape
    ys = _tile_spans(h, tile)
    xs = _tile_spans(w, tile)
    nty, ntx = len(ys), len(xs)

    cdfs = np.zeros((nty, ntx, 256), dtype=np.float64)
    cy = np.zeros(nty)
    cx = np.zeros(ntx)
    for ti, (y0, y1) in enumerate(ys):
        cy[ti] = (y0 + y1 - 1) / 2.0
        for tj, (x0, x1) in enumerate(xs):
            cx[tj] = (x0 + x1 - 1) / 2.0
            patch = img.pixels[y0:y1, x0:x1]
            hist = np.bincount(patch.ravel(), minlength=256).astype(np.float64)
            hist = _clip_histogram(hist, clip * patch.size)
            cdf = np.cumsum(hist)
            cdfs[ti, tj] = cdf / cdf[-1]

    # Fractional tile coordinates per row/column; np.interp clamps at the ends.
    fi = np.interp(np.arange(h), cy, np.arange(nty)) if nty > 1 else np.zeros(h)
    fj = np.interp(np.arange(w), cx, np.arange(ntx)) if ntx > 1 else np.zeros(w)
    i0 = np.clip(np.floor(fi).astype(int), 0, max(nty - 2, 0))
    j0 = np.clip(np.floor(fj).astype(int), 0, max(ntx - 2, 0))
    i1 = np.minimum(i0 + 1, nty - 1)
    j1 = np.minimum(j0 + 1, ntx - 1)
    wi = (fi - i0)[:, None]
    wj = (fj - j0)[None, :]

    v = img.pixels.astype(int)
    i0g, i1g = i0[:, None], i1[:, None]
    j0g, j1g = j0[None, :], j1[None, :]
    blended = (
        cdfs[i0g, j0g, v] * (1 - wi) * (1 - wj)
        + cdfs[i0g, j1g, v] * (1 - wi) * wj
        + cdfs[i1g, j0g, v] * wi * (1 - wj)
        + cdfs[i1g, j1g, v] * wi * wj
    )
    out = np.rint((levels - 1) * blended).astype(np.uint8)
    return GreyImage(out, levels)


def _tile_spans(dim: int, tile: int) -> list[tuple[int, int]]:
    spans = []
    for origin in range(0, dim, tile):
        spans.append((origin, min(origin + tile, dim)))
    return spans


def linear_quantize(img: GreyImage, levels: int) -> GreyImage:
    """Uniform quantization of a 256-level image: q = floor(v * levels / 256)."""
    if levels < 2:
        raise ValueError(f"levels must be >= 2, got {levels}")
    if img.levels != 256:
        raise ValueError("linear_quantize expects a 256-level input image")
    out = (img.pixels.astype(np.int64) * levels) // 256
    return GreyImage(out.astype(np.uint8), levels)


def split_pieces(img: GreyImage, size: int = 80, overlap: int = 22) -> PieceSet:
    """Tile `img` into size x size pieces at stride size - overlap.

    If the stride tiling leaves an uncovered margin, one extra piece clamped
    to the image edge is appended per axis, so the pieces cover every pixel.
    """
    if img.width < size or img.height < size:
        raise ValueError(
            f"image {img.width}x{img.height} smaller than piece size {size}"
        )
    stride = size - overlap
    if stride <= 0:
        raise ValueError("overlap must be smaller than piece size")

    def axis_origins(dim: int) -> list[int]:
        origins = list(range(0, dim - size + 1, stride))
        if origins[-1] + size < dim:
            origins.append(dim - size)
        return origins

    pieces = []
    origins = []
    for y in axis_origins(img.height):
        for x in axis_origins(img.width):
            pieces.append(GreyImage(img.pixels[y : y + size, x : x + size].copy(), img.levels))
            origins.append((x, y))
    return PieceSet(pieces, origins)
