"""Compiled patch extraction for the convolution op."""

from numba import njit


@njit(cache=True)
def im2col(x, kh, kw, out):
    """``x`` is ``(outer, n1, mid, n2, inner, C)``; fills ``out`` of shape
    ``(outer, n1, mid, n2, inner, kh*kw, C)`` with zero-padded taps over
    the ``(n1, n2)`` plane."""
    n_outer, n1, n_mid, n2, n_inner, C = x.shape
    ph = kh // 2
    pw = kw // 2
    for o in range(n_outer):
        for y1 in range(n1):
            for m in range(n_mid):
                for y2 in range(n2):
                    for q in range(n_inner):
                        for i in range(kh):
                            s1 = y1 + i - ph
                            for j in range(kw):
                                s2 = y2 + j - pw
                                k = i * kw + j
                                if 0 <= s1 < n1 and 0 <= s2 < n2:
                                    for c in range(C):
                                        out[o, y1, m, y2, q, k, c] = x[o, s1, m, s2, q, c]
                                else:
                                    for c in range(C):
                                        out[o, y1, m, y2, q, k, c] = 0.0
