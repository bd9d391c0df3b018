import numpy as np
import pytest

from mgrftex import features as ft
from mgrftex.imagecore import GreyImage
from mgrftex.mgrfmodel import NestedModel, Potential


def random_image(rng, q=4, shape=(8, 8)) -> GreyImage:
    return GreyImage(rng.integers(0, q, size=shape, dtype=np.uint8), q)


def _pool(q):
    return [
        (ft.marginal_kind(q), ((0, 0),)),
        (ft.gld_kind(q), ((0, 0), (1, 0))),
        (ft.gld_kind(q), ((0, 0), (0, 1))),
        (ft.gld_kind(q), ((0, 0), (1, 1))),
        (ft.glc_kind(2, q), ((0, 0), (-1, 1))),
        (ft.bp_kind(3), ((0, 0), (1, 0), (0, 1))),
        (ft.be_kind(3, 1), ((0, 0), (1, 0), (-1, 0))),
        (ft.bp_kind(5), ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1))),
    ]


def random_model(rng, q=4, n_pots=4, theta_scale=0.5, with_filter=False) -> NestedModel:
    """Small random model whose clique families fit inside an 8x8 image."""
    pool = _pool(q)
    picks = rng.choice(len(pool), size=min(n_pots, len(pool)), replace=False)
    pots = []
    for i in picks:
        kind, offs = pool[i]
        theta = rng.normal(0.0, theta_scale, size=kind.bins)
        pots.append(Potential(kind, offs, theta, iteration=0))
    if with_filter:
        offs = tuple(
            [(0, 0)] + [(dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dx, dy) != (0, 0)]
        )
        coeffs = rng.normal(0.0, 0.3, size=9)
        edges = np.sort(rng.normal(0.0, 1.5, size=5))
        kind = ft.filter_kind("test3x3", coeffs, edges)
        pots.append(Potential(kind, offs, rng.normal(0.0, theta_scale, size=kind.bins)))
    return NestedModel(q, tuple(pots))
