"""Numba kernels for Gibbs sampling with incremental statistics.

The model is flattened into per-potential arrays so the site-update loop is
free of Python objects.  A chain state carries, besides the image, the raw
per-bin clique counts of every potential and (for linear-filter potentials)
a map of filter responses at every valid anchor; both are updated
incrementally on each pixel change.  The Gibbs exponent is the raw per-clique
energy sum(theta[bin]) over cliques touching the site.

Offset patterns may contain duplicate offsets (kept to preserve arity); a
clique is visited once per anchor, with every duplicate member position
switched together when a candidate level is evaluated.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

K_MARGINAL, K_GLC, K_GLD, K_BP, K_BE, K_FILTER = 0, 1, 2, 3, 4, 5

_JIT = dict(cache=True, nogil=True)


@njit(inline="always", **_JIT)
def _bin_discrete(kindcode, q, c, vals, d):
    if kindcode == K_MARGINAL:
        return vals[0]
    if kindcode == K_GLC:
        acc = 0
        w = 1
        for i in range(d):
            acc += vals[i] * w
            w *= q
        return acc
    if kindcode == K_GLD:
        return vals[1] - vals[0] + q - 1
    if kindcode == K_BP:
        acc = 0
        for i in range(1, d):
            if vals[0] < vals[i]:
                acc += 1 << (i - 1)
        return acc
    acc = 0
    for i in range(1, d):
        if abs(vals[0] - vals[i]) <= c:
            acc += 1 << (i - 1)
    return acc


@njit(inline="always", **_JIT)
def _bin_response(r, edges, e0, e1):
    b = 0
    for k in range(e0, e1):
        if r >= edges[k]:
            b += 1
        else:
            break
    return b


@njit(**_JIT)
def init_state(
    img,
    kind, d, s, bec, q,
    off_start, off_dx, off_dy, coef,
    th_start, edge_start, edges,
    axlo, axhi, aylo, ayhi,
    filt_idx, counts, resp,
):
    """Populate clique-bin counts and filter response maps from scratch."""
    n_pot = kind.shape[0]
    maxd = 0
    for p in range(n_pot):
        if d[p] > maxd:
            maxd = d[p]
    vals = np.empty(maxd, dtype=np.int64)
    for p in range(n_pot):
        o0 = off_start[p]
        t0 = th_start[p]
        dp = d[p]
        for ay in range(aylo[p], ayhi[p] + 1):
            for ax in range(axlo[p], axhi[p] + 1):
                if kind[p] == K_FILTER:
                    r = 0.0
                    for m in range(dp):
                        r += coef[o0 + m] * img[ay + off_dy[o0 + m], ax + off_dx[o0 + m]]
                    resp[filt_idx[p], ay, ax] = r
                    b = _bin_response(r, edges, edge_start[p], edge_start[p + 1])
                else:
                    for m in range(dp):
                        vals[m] = img[ay + off_dy[o0 + m], ax + off_dx[o0 + m]]
                    b = _bin_discrete(kind[p], q, bec[p], vals, dp)
                counts[t0 + b] += 1


@njit(**_JIT)
def site_level_energies(
    img, x, y,
    kind, d, s, bec, q,
    off_start, off_dx, off_dy, coef,
    th_start, theta, edge_start, edges,
    axlo, axhi, aylo, ayhi,
    filt_idx, resp,
    evec, vals,
):
    """Raw energy contribution of cliques touching (x, y), per candidate level."""
    for qv in range(q):
        evec[qv] = 0.0
    old = img[y, x]
    n_pot = kind.shape[0]
    for p in range(n_pot):
        o0 = off_start[p]
        t0 = th_start[p]
        dp = d[p]
        if kind[p] == K_FILTER:
            for j in range(dp):
                ax = x - off_dx[o0 + j]
                ay = y - off_dy[o0 + j]
                if ax < axlo[p] or ax > axhi[p] or ay < aylo[p] or ay > ayhi[p]:
                    continue
                cj = coef[o0 + j]
                base = resp[filt_idx[p], ay, ax] - cj * old
                for qv in range(q):
                    b = _bin_response(base + cj * qv, edges, edge_start[p], edge_start[p + 1])
                    evec[qv] += theta[t0 + b]
        else:
            for j in range(dp):
                dup = False
                for jj in range(j):
                    if off_dx[o0 + jj] == off_dx[o0 + j] and off_dy[o0 + jj] == off_dy[o0 + j]:
                        dup = True
                        break
                if dup:
                    continue
                ax = x - off_dx[o0 + j]
                ay = y - off_dy[o0 + j]
                if ax < axlo[p] or ax > axhi[p] or ay < aylo[p] or ay > ayhi[p]:
                    continue
                for m in range(dp):
                    vals[m] = img[ay + off_dy[o0 + m], ax + off_dx[o0 + m]]
                for qv in range(q):
                    for m in range(dp):
                        if off_dx[o0 + m] == off_dx[o0 + j] and off_dy[o0 + m] == off_dy[o0 + j]:
                            vals[m] = qv
                    b = _bin_discrete(kind[p], q, bec[p], vals, dp)
                    evec[qv] += theta[t0 + b]


@njit(**_JIT)
def apply_site(
    img, x, y, new,
    kind, d, s, bec, q,
    off_start, off_dx, off_dy, coef,
    th_start, edge_start, edges,
    axlo, axhi, aylo, ayhi,
    filt_idx, counts, resp,
    vals,
):
    """Set img[y, x] = new, updating counts and response maps incrementally."""
    old = img[y, x]
    if new == old:
        return
    n_pot = kind.shape[0]
    for p in range(n_pot):
        o0 = off_start[p]
        t0 = th_start[p]
        dp = d[p]
        if kind[p] == K_FILTER:
            for j in range(dp):
                ax = x - off_dx[o0 + j]
                ay = y - off_dy[o0 + j]
                if ax < axlo[p] or ax > axhi[p] or ay < aylo[p] or ay > ayhi[p]:
                    continue
                r_old = resp[filt_idx[p], ay, ax]
                r_new = r_old + coef[o0 + j] * (new - old)
                counts[t0 + _bin_response(r_old, edges, edge_start[p], edge_start[p + 1])] -= 1
                counts[t0 + _bin_response(r_new, edges, edge_start[p], edge_start[p + 1])] += 1
                resp[filt_idx[p], ay, ax] = r_new
        else:
            for j in range(dp):
                dup = False
                for jj in range(j):
                    if off_dx[o0 + jj] == off_dx[o0 + j] and off_dy[o0 + jj] == off_dy[o0 + j]:
                        dup = True
                        break
                if dup:
                    continue
                ax = x - off_dx[o0 + j]
                ay = y - off_dy[o0 + j]
                if ax < axlo[p] or ax > axhi[p] or ay < aylo[p] or ay > ayhi[p]:
                    continue
                for m in range(dp):
                    vals[m] = img[ay + off_dy[o0 + m], ax + off_dx[o0 + m]]
                b_old = _bin_discrete(kind[p], q, bec[p], vals, dp)
                for m in range(dp):
                    if off_dx[o0 + m] == off_dx[o0 + j] and off_dy[o0 + m] == off_dy[o0 + j]:
                        vals[m] = new
                b_new = _bin_discrete(kind[p], q, bec[p], vals, dp)
                counts[t0 + b_old] -= 1
                counts[t0 + b_new] += 1
    img[y, x] = new


@njit(**_JIT)
def _sweep_with_buffers(
    img, mask, uniforms,
    kind, d, s, bec, q,
    off_start, off_dx, off_dy, coef,
    th_start, theta, edge_start, edges,
    axlo, axhi, aylo, ayhi,
    filt_idx, counts, resp,
    vals, evec, prob,
):
    h, w = img.shape
    u_idx = 0
    for y in range(h):
        for x in range(w):
            if mask[y, x]:
                continue
            u = uniforms[u_idx]
            u_idx += 1
            site_level_energies(
                img, x, y,
                kind, d, s, bec, q,
                off_start, off_dx, off_dy, coef,
                th_start, theta, edge_start, edges,
                axlo, axhi, aylo, ayhi,
                filt_idx, resp,
                evec, vals,
            )
            emin = evec[0]
            for qv in range(1, q):
                if evec[qv] < emin:
                    emin = evec[qv]
            total = 0.0
            for qv in range(q):
                pv = math.exp(-(evec[qv] - emin))
                prob[qv] = pv
                total += pv
            r = u * total
            acc = 0.0
            sel = q - 1
            for qv in range(q):
                acc += prob[qv]
                if r < acc:
                    sel = qv
                    break
            apply_site(
                img, x, y, sel,
                kind, d, s, bec, q,
                off_start, off_dx, off_dy, coef,
                th_start, edge_start, edges,
                axlo, axhi, aylo, ayhi,
                filt_idx, counts, resp,
                vals,
            )


@njit(**_JIT)
def _scratch_sizes(d, q):
    maxd = 1
    for p in range(d.shape[0]):
        if d[p] > maxd:
            maxd = d[p]
    return maxd


@njit(**_JIT)
def gibbs_sweep(
    img, mask, uniforms,
    kind, d, s, bec, q,
    off_start, off_dx, off_dy, coef,
    th_start, theta, edge_start, edges,
    axlo, axhi, aylo, ayhi,
    filt_idx, counts, resp,
):
    """One raster-order sweep; each unmasked site redrawn from its conditional."""
    maxd = _scratch_sizes(d, q)
    vals = np.empty(maxd, dtype=np.int64)
    evec = np.empty(q, dtype=np.float64)
    prob = np.empty(q, dtype=np.float64)
    _sweep_with_buffers(
        img, mask, uniforms,
        kind, d, s, bec, q,
        off_start, off_dx, off_dy, coef,
        th_start, theta, edge_start, edges,
        axlo, axhi, aylo, ayhi,
        filt_idx, counts, resp,
        vals, evec, prob,
    )


@njit(**_JIT)
def run_chain_accumulate(
    img, mask, uniforms2d,
    kind, d, s, bec, q,
    off_start, off_dx, off_dy, coef,
    th_start, theta, edge_start, edges,
    axlo, axhi, aylo, ayhi,
    filt_idx, counts, resp,
    nf, freq_accum,
):
    """Run len(uniforms2d) sweeps, accumulating normalized histograms per sweep."""
    n_sweeps = uniforms2d.shape[0]
    n_pot = kind.shape[0]
    maxd = _scratch_sizes(d, q)
    vals = np.empty(maxd, dtype=np.int64)
    evec = np.empty(q, dtype=np.float64)
    prob = np.empty(q, dtype=np.float64)
    for t in range(n_sweeps):
        _sweep_with_buffers(
            img, mask, uniforms2d[t],
            kind, d, s, bec, q,
            off_start, off_dx, off_dy, coef,
            th_start, theta, edge_start, edges,
            axlo, axhi, aylo, ayhi,
            filt_idx, counts, resp,
            vals, evec, prob,
        )
        for p in range(n_pot):
            t0 = th_start[p]
            for b in range(s[p]):
                freq_accum[t0 + b] += counts[t0 + b] / nf[p]
