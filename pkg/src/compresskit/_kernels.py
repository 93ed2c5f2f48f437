"""Hot numeric kernels, each in a numba loop form and a pure-numpy form.

The public wrappers at the bottom dispatch on :data:`compresskit._accel.JIT_ENABLED`.
Both forms of a kernel perform the same arithmetic in the same order of
operations per element, so they agree to rounding; they are not required to be
bitwise identical to each other (reduction order inside dot products differs).
"""
from functools import lru_cache
from math import sqrt

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import JIT_ENABLED, njit, uint64


# ---------------------------------------------------------------------------
# one-sided Jacobi
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def round_robin_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Column pairs for one sweep, grouped into rounds of disjoint pairs.

    Circle-method tournament: ``n - 1`` rounds (``n`` rounds for odd ``n``),
    every unordered pair exactly once. Returns ``(pairs, round_starts)`` where
    ``pairs`` is ``(n*(n-1)/2, 2)`` with ``i < j`` and ``round_starts`` holds
    the offset of each round plus a final sentinel.
    """
    size = n + (n % 2)
    players = list(range(size))
    flat = []
    starts = [0]
    for _ in range(size - 1):
        for k in range(size // 2):
            a, b = players[k], players[size - 1 - k]
            if a < n and b < n:
                flat.append((min(a, b), max(a, b)))
        starts.append(len(flat))
        players = [players[0], players[-1]] + players[1:-1]
    pairs = np.array(flat, dtype=np.int64).reshape(-1, 2)
    pairs.setflags(write=False)
    bounds = np.array(starts, dtype=np.int64)
    bounds.setflags(write=False)
    return pairs, bounds


@njit(cache=True)
def _jacobi_numba(at, vt, pairs, tol, floor, max_sweeps):
    n, m = at.shape
    for sweep in range(1, max_sweeps + 1):
        rotated = False
        for t in range(pairs.shape[0]):
            i = pairs[t, 0]
            j = pairs[t, 1]
            alpha = 0.0
            beta = 0.0
            gamma = 0.0
            for r in range(m):
                x = at[i, r]
                y = at[j, r]
                alpha += x * x
                beta += y * y
                gamma += x * y
            g = abs(gamma)
            if g <= tol * sqrt(alpha * beta) or g <= floor:
                continue
            rotated = True
            zeta = (beta - alpha) / (2.0 * gamma)
            sgn = 1.0 if zeta >= 0.0 else -1.0
            tn = sgn / (abs(zeta) + sqrt(1.0 + zeta * zeta))
            c = 1.0 / sqrt(1.0 + tn * tn)
            s = c * tn
            for r in range(m):
                x = at[i, r]
                y = at[j, r]
                at[i, r] = c * x - s * y
                at[j, r] = s * x + c * y
            for r in range(n):
                x = vt[i, r]
                y = vt[j, r]
                vt[i, r] = c * x - s * y
                vt[j, r] = s * x + c * y
        if not rotated:
            return sweep
    return -1


def _jacobi_numpy(at, vt, pairs, bounds, tol, floor, max_sweeps):
    rounds = [
        (pairs[bounds[k]:bounds[k + 1], 0], pairs[bounds[k]:bounds[k + 1], 1])
        for k in range(len(bounds) - 1)
    ]
    for sweep in range(1, max_sweeps + 1):
        rotated = False
        for ii, jj in rounds:
            ai = at[ii]
            aj = at[jj]
            alpha = np.einsum("pr,pr->p", ai, ai)
            beta = np.einsum("pr,pr->p", aj, aj)
            gamma = np.einsum("pr,pr->p", ai, aj)
            g = np.abs(gamma)
            live = (g > tol * np.sqrt(alpha * beta)) & (g > floor)
            if not live.any():
                continue
            rotated = True
            ii, jj = ii[live], jj[live]
            ai, aj = ai[live], aj[live]
            zeta = (beta[live] - alpha[live]) / (2.0 * gamma[live])
            sgn = np.where(zeta >= 0.0, 1.0, -1.0)
            tn = sgn / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = (1.0 / np.sqrt(1.0 + tn * tn))[:, None]
            s = c * tn[:, None]
            at[ii] = c * ai - s * aj
            at[jj] = s * ai + c * aj
            vi = vt[ii]
            vj = vt[jj]
            vt[ii] = c * vi - s * vj
            vt[jj] = s * vi + c * vj
        if not rotated:
            return sweep
    return -1


def jacobi_rotate(at, vt, tol, floor, max_sweeps, use_jit=None):
    """Orthogonalize the rows of ``at`` in place, accumulating rotations in ``vt``.

    ``at`` is ``A`` transposed (one row per column of ``A``) in float64, ``vt``
    starts as the identity. Returns the number of sweeps used, including the
    final sweep that applied no rotation, or ``-1`` when ``max_sweeps`` ran out.
    """
    use_jit = JIT_ENABLED if use_jit is None else use_jit
    pairs, bounds = round_robin_pairs(at.shape[0])
    if pairs.shape[0] == 0:
        return 1
    if use_jit:
        return int(_jacobi_numba(at, vt, pairs, tol, floor, max_sweeps))
    return _jacobi_numpy(at, vt, pairs, bounds, tol, floor, max_sweeps)


# ---------------------------------------------------------------------------
# im2col / pooling
# ---------------------------------------------------------------------------

@njit(cache=True, boundscheck=False)
def _im2col_numba(x, kh, kw, stride, pad, oh, ow):
    c, h, w = x.shape
    npos = oh * ow
    cols = np.zeros((c * kh * kw, npos), dtype=x.dtype)
    xf = x.ravel()
    cf = cols.ravel()
    for ch in range(c):
        for ky in range(kh):
            for kx in range(kw):
                row = (ch * kh + ky) * kw + kx
                # output columns whose input column lands inside [0, w)
                lo = 0
                while lo < ow and lo * stride - pad + kx < 0:
                    lo += 1
                hi = ow
                while hi > lo and (hi - 1) * stride - pad + kx >= w:
                    hi -= 1
                for oy in range(oh):
                    iy = oy * stride - pad + ky
                    if iy < 0 or iy >= h:
                        continue
                    # unsigned offsets drop numba's negative-index wraparound
                    # check, which otherwise keeps LLVM from vectorizing the copy
                    dst = uint64(row * npos + oy * ow + lo)
                    src = uint64((ch * h + iy) * w + kx - pad + lo * stride)
                    step = uint64(stride)
                    for j in range(uint64(hi - lo)):
                        cf[dst + j] = xf[src + j * step]
    return cols


def _im2col_numpy(x, kh, kw, stride, pad, oh, ow):
    c = x.shape[0]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((c, kh, kw, oh, ow), dtype=x.dtype)
    for ky in range(kh):
        for kx in range(kw):
            cols[:, ky, kx] = xp[:, ky:ky + stride * (oh - 1) + 1:stride,
                                 kx:kx + stride * (ow - 1) + 1:stride]
    return cols.reshape(c * kh * kw, oh * ow)


def im2col(x, kh, kw, stride, pad, oh, ow, use_jit=None):
    """Unroll ``x[C,H,W]`` into a ``(C*kh*kw, oh*ow)`` patch matrix.

    Row order is channel-major, then kernel row, then kernel column, matching
    ``w.reshape(O, -1)`` for a weight ``w[O,C,kh,kw]``; so ``w.reshape(O, -1) @
    cols`` is the convolution output laid out as ``[O, oh*ow]``.
    """
    use_jit = JIT_ENABLED if use_jit is None else use_jit
    x = np.ascontiguousarray(x)
    if use_jit:
        return _im2col_numba(x, kh, kw, stride, pad, oh, ow)
    return _im2col_numpy(x, kh, kw, stride, pad, oh, ow)


@njit(cache=True)
def _maxpool_numba(x, size, stride, oh, ow):
    c = x.shape[0]
    out = np.empty((c, oh, ow), dtype=x.dtype)
    for ch in range(c):
        for oy in range(oh):
            for ox in range(ow):
                y0 = oy * stride
                x0 = ox * stride
                best = x[ch, y0, x0]
                for ky in range(size):
                    for kx in range(size):
                        v = x[ch, y0 + ky, x0 + kx]
                        if v > best:
                            best = v
                out[ch, oy, ox] = best
    return out


def _maxpool_numpy(x, size, stride, oh, ow):
    win = sliding_window_view(x, (size, size), axis=(1, 2))
    win = win[:, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    return win.max(axis=(3, 4))


def maxpool(x, size, stride, oh, ow, use_jit=None):
    use_jit = JIT_ENABLED if use_jit is None else use_jit
    if use_jit:
        return _maxpool_numba(x, size, stride, oh, ow)
    return np.ascontiguousarray(_maxpool_numpy(x, size, stride, oh, ow))
