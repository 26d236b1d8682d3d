"""Compiled inner loops for convolution and bilinear resampling.

Plain nested loops: every output element accumulates its reduction in a
fixed (ci, kh, kw) order, which keeps results bitwise equal to the naive
scalar reference used by the tests. fastmath stays off so LLVM cannot
reassociate or contract the float64 arithmetic. The stride-1 branches
repeat the generic code with literal unit strides so the inner loops
vectorize; the per-element operation order is identical either way.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def conv2d_fwd(xp, w, stride, out):
    # xp: padded input [N,Ci,Hp,Wp]; w: [Co,Ci,kh,kw]; out preset to zero.
    # Every output element accumulates its (ci, kh, kw) terms in that fixed
    # order; the strided branch gathers each sub-grid once into a scratch
    # buffer so the multiply-accumulate loops stay unit stride.
    n_batch, ci_n, _, _ = xp.shape
    co_n, _, kh, kw = w.shape
    ho, wo = out.shape[2], out.shape[3]
    if stride == 1:
        for n in range(n_batch):
            for co in range(co_n):
                for ci in range(ci_n):
                    for i in range(kh):
                        for j in range(kw):
                            wv = w[co, ci, i, j]
                            for oh in range(ho):
                                xrow = xp[n, ci, oh + i]
                                orow = out[n, co, oh]
                                for ow in range(wo):
                                    orow[ow] += xrow[ow + j] * wv
    else:
        scratch = np.empty((ho, wo))
        for n in range(n_batch):
            for ci in range(ci_n):
                for i in range(kh):
                    for j in range(kw):
                        for oh in range(ho):
                            xrow = xp[n, ci, oh * stride + i]
                            srow = scratch[oh]
                            for ow in range(wo):
                                srow[ow] = xrow[ow * stride + j]
                        for co in range(co_n):
                            wv = w[co, ci, i, j]
                            for oh in range(ho):
                                srow = scratch[oh]
                                orow = out[n, co, oh]
                                for ow in range(wo):
                                    orow[ow] += srow[ow] * wv


@njit(cache=True)
def conv2d_bwd_dw(xp, g, stride, dw):
    # dw[co,ci,i,j] = sum over (n,oh,ow) of g * xp. Gradients only need a
    # fixed deterministic reduction order (the naive-oracle constraint
    # applies to the forward pass), so rows accumulate into a vector
    # buffer that is folded sequentially at the end.
    n_batch = xp.shape[0]
    co_n, ci_n, kh, kw = dw.shape
    ho, wo = g.shape[2], g.shape[3]
    vacc = np.empty(wo)
    scratch = np.empty((ho, wo))
    for n in range(n_batch):
        for ci in range(ci_n):
            for i in range(kh):
                for j in range(kw):
                    if stride == 1:
                        for oh in range(ho):
                            xrow = xp[n, ci, oh + i]
                            srow = scratch[oh]
                            for ow in range(wo):
                                srow[ow] = xrow[ow + j]
                    else:
                        for oh in range(ho):
                            xrow = xp[n, ci, oh * stride + i]
                            srow = scratch[oh]
                            for ow in range(wo):
                                srow[ow] = xrow[ow * stride + j]
                    for co in range(co_n):
                        for ow in range(wo):
                            vacc[ow] = 0.0
                        for oh in range(ho):
                            grow = g[n, co, oh]
                            srow = scratch[oh]
                            for ow in range(wo):
                                vacc[ow] += grow[ow] * srow[ow]
                        acc = 0.0
                        for ow in range(wo):
                            acc += vacc[ow]
                        dw[co, ci, i, j] += acc


@njit(cache=True)
def conv2d_bwd_dx(w, g, stride, dxp):
    n_batch = dxp.shape[0]
    co_n, ci_n, kh, kw = w.shape
    ho, wo = g.shape[2], g.shape[3]
    if stride == 1:
        for n in range(n_batch):
            for co in range(co_n):
                for ci in range(ci_n):
                    for i in range(kh):
                        for j in range(kw):
                            wv = w[co, ci, i, j]
                            for oh in range(ho):
                                grow = g[n, co, oh]
                                drow = dxp[n, ci, oh + i]
                                for ow in range(wo):
                                    drow[ow + j] += grow[ow] * wv
    else:
        scratch = np.empty((ho, wo))
        for n in range(n_batch):
            for ci in range(ci_n):
                for i in range(kh):
                    for j in range(kw):
                        for oh in range(ho):
                            srow = scratch[oh]
                            for ow in range(wo):
                                srow[ow] = 0.0
                        for co in range(co_n):
                            wv = w[co, ci, i, j]
                            for oh in range(ho):
                                grow = g[n, co, oh]
                                srow = scratch[oh]
                                for ow in range(wo):
                                    srow[ow] += grow[ow] * wv
                        for oh in range(ho):
                            drow = dxp[n, ci, oh * stride + i]
                            srow = scratch[oh]
                            for ow in range(wo):
                                drow[ow * stride + j] += srow[ow]


@njit(cache=True)
def bn_batch_stats(x):
    # Per-channel mean and biased variance of [N,C,H,W] in one pass.
    n_batch, ch, h, w = x.shape
    count = n_batch * h * w
    mean = np.zeros(ch)
    var = np.zeros(ch)
    srow = np.empty(w)
    qrow = np.empty(w)
    for c in range(ch):
        for ow in range(w):
            srow[ow] = 0.0
            qrow[ow] = 0.0
        for n in range(n_batch):
            for i in range(h):
                xrow = x[n, c, i]
                for ow in range(w):
                    v = xrow[ow]
                    srow[ow] += v
                    qrow[ow] += v * v
        s = 0.0
        q = 0.0
        for ow in range(w):
            s += srow[ow]
            q += qrow[ow]
        m = s / count
        mean[c] = m
        var[c] = q / count - m * m
        if var[c] < 0.0:
            var[c] = 0.0
    return mean, var


@njit(cache=True)
def bn_normalize(x, mean, inv_std, gamma, beta, out):
    n_batch, ch, h, w = x.shape
    for n in range(n_batch):
        for c in range(ch):
            m = mean[c]
            scale = inv_std[c] * gamma[c]
            shift = beta[c]
            for i in range(h):
                xrow = x[n, c, i]
                orow = out[n, c, i]
                for ow in range(w):
                    orow[ow] = (xrow[ow] - m) * scale + shift


@njit(cache=True)
def _axis_coords(n_src, n_dst):
    # Half-pixel-center source coordinates, clamped to [0, n_src - 1].
    lo = np.empty(n_dst, dtype=np.int64)
    hi = np.empty(n_dst, dtype=np.int64)
    frac = np.empty(n_dst, dtype=np.float64)
    for i in range(n_dst):
        u = (i + 0.5) * n_src / n_dst - 0.5
        if u < 0.0:
            u = 0.0
        if u > n_src - 1:
            u = float(n_src - 1)
        i0 = int(np.floor(u))
        if i0 > n_src - 1:
            i0 = n_src - 1
        i1 = i0 + 1
        if i1 > n_src - 1:
            i1 = n_src - 1
        lo[i] = i0
        hi[i] = i1
        frac[i] = u - i0
    return lo, hi, frac


@njit(cache=True)
def bilinear_fwd(x, out):
    n_batch, ch, h, w = x.shape
    ho, wo = out.shape[2], out.shape[3]
    r0, r1, fu = _axis_coords(h, ho)
    c0, c1, fv = _axis_coords(w, wo)
    for n in range(n_batch):
        for c in range(ch):
            for oh in range(ho):
                i0, i1, a = r0[oh], r1[oh], fu[oh]
                top = x[n, c, i0]
                bot = x[n, c, i1]
                orow = out[n, c, oh]
                for ow in range(wo):
                    j0, j1, b = c0[ow], c1[ow], fv[ow]
                    orow[ow] = (
                        (1.0 - a) * (1.0 - b) * top[j0]
                        + (1.0 - a) * b * top[j1]
                        + a * (1.0 - b) * bot[j0]
                        + a * b * bot[j1]
                    )


@njit(cache=True)
def bilinear_bwd(g, dx):
    n_batch, ch, h, w = dx.shape
    ho, wo = g.shape[2], g.shape[3]
    r0, r1, fu = _axis_coords(h, ho)
    c0, c1, fv = _axis_coords(w, wo)
    for n in range(n_batch):
        for c in range(ch):
            for oh in range(ho):
                i0, i1, a = r0[oh], r1[oh], fu[oh]
                dtop = dx[n, c, i0]
                dbot = dx[n, c, i1]
                grow = g[n, c, oh]
                for ow in range(wo):
                    j0, j1, b = c0[ow], c1[ow], fv[ow]
                    gv = grow[ow]
                    dtop[j0] += (1.0 - a) * (1.0 - b) * gv
                    dtop[j1] += (1.0 - a) * b * gv
                    dbot[j0] += a * (1.0 - b) * gv
                    dbot[j1] += a * b * gv
