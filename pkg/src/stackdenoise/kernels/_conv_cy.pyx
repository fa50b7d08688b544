# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled 3x3 convolution kernels (forward, weight/bias gradients).

Inputs arrive pre-padded from the Python wrappers so the inner loops carry
no bounds logic. Work is split so each thread owns a disjoint slice of the
output and every accumulation runs in a fixed sequential order, which keeps
results bit-identical across thread counts.
"""

from cython.parallel import prange

ctypedef fused floating:
    float
    double


def conv_fwd(floating[:, :, :, ::1] xp, floating[:, :, :, ::1] w,
             floating[::1] b, floating[:, :, :, ::1] y, int num_threads):
    """y[n,o] = b[o] + sum_c correlate(xp[n,c], w[o,c]) for padded xp."""
    cdef Py_ssize_t N = y.shape[0], Co = y.shape[1], H = y.shape[2], W = y.shape[3]
    cdef Py_ssize_t Ci = xp.shape[1]
    cdef Py_ssize_t no, n, o, c, i, j
    cdef floating w00, w01, w02, w10, w11, w12, w20, w21, w22, bias

    for no in prange(N * Co, nogil=True, schedule='static', num_threads=num_threads):
        n = no // Co
        o = no % Co
        bias = b[o]
        for i in range(H):
            for j in range(W):
                y[n, o, i, j] = bias
        for c in range(Ci):
            w00 = w[o, c, 0, 0]; w01 = w[o, c, 0, 1]; w02 = w[o, c, 0, 2]
            w10 = w[o, c, 1, 0]; w11 = w[o, c, 1, 1]; w12 = w[o, c, 1, 2]
            w20 = w[o, c, 2, 0]; w21 = w[o, c, 2, 1]; w22 = w[o, c, 2, 2]
            for i in range(H):
                for j in range(W):
                    y[n, o, i, j] = y[n, o, i, j] + (
                        w00 * xp[n, c, i, j] + w01 * xp[n, c, i, j + 1] + w02 * xp[n, c, i, j + 2]
                        + w10 * xp[n, c, i + 1, j] + w11 * xp[n, c, i + 1, j + 1] + w12 * xp[n, c, i + 1, j + 2]
                        + w20 * xp[n, c, i + 2, j] + w21 * xp[n, c, i + 2, j + 1] + w22 * xp[n, c, i + 2, j + 2])


def conv_bwd_params(floating[:, :, :, ::1] xp, floating[:, :, :, ::1] gy,
                    floating[:, :, :, ::1] gw, floating[::1] gb, int num_threads):
    """Accumulate weight and bias gradients; gw/gb must arrive zeroed."""
    cdef Py_ssize_t N = gy.shape[0], Co = gy.shape[1], H = gy.shape[2], W = gy.shape[3]
    cdef Py_ssize_t Ci = xp.shape[1]
    cdef Py_ssize_t o, n, c, i, j
    cdef floating g, sb
    cdef floating s00, s01, s02, s10, s11, s12, s20, s21, s22

    for o in prange(Co, nogil=True, schedule='static', num_threads=num_threads):
        sb = 0
        for n in range(N):
            for i in range(H):
                for j in range(W):
                    sb = sb + gy[n, o, i, j]
        gb[o] = sb
        for c in range(Ci):
            s00 = 0; s01 = 0; s02 = 0
            s10 = 0; s11 = 0; s12 = 0
            s20 = 0; s21 = 0; s22 = 0
            for n in range(N):
                for i in range(H):
                    for j in range(W):
                        g = gy[n, o, i, j]
                        s00 = s00 + g * xp[n, c, i, j]
                        s01 = s01 + g * xp[n, c, i, j + 1]
                        s02 = s02 + g * xp[n, c, i, j + 2]
                        s10 = s10 + g * xp[n, c, i + 1, j]
                        s11 = s11 + g * xp[n, c, i + 1, j + 1]
                        s12 = s12 + g * xp[n, c, i + 1, j + 2]
                        s20 = s20 + g * xp[n, c, i + 2, j]
                        s21 = s21 + g * xp[n, c, i + 2, j + 1]
                        s22 = s22 + g * xp[n, c, i + 2, j + 2]
            gw[o, c, 0, 0] = s00; gw[o, c, 0, 1] = s01; gw[o, c, 0, 2] = s02
            gw[o, c, 1, 0] = s10; gw[o, c, 1, 1] = s11; gw[o, c, 1, 2] = s12
            gw[o, c, 2, 0] = s20; gw[o, c, 2, 1] = s21; gw[o, c, 2, 2] = s22
