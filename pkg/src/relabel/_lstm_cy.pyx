# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LSTM recurrence. Same contract as ``_lstm_py``.

Row-major matrices are handed to column-major BLAS as their transposes,
so every ``dgemm`` call below computes C^T = op(B)^T op(A)^T.
"""
import numpy as np
from libc.math cimport tanh
from scipy.linalg.cython_blas cimport dgemm


cdef extern from "_lstm_cell.h" nogil:
    void lstm_cell_row(const double* z, const double* cprev, double* gate, double* c,
                       double* h, int H)


def lstm_forward(xproj_in, wh_in):
    cdef const double[:, :, ::1] xproj = np.ascontiguousarray(xproj_in, dtype=np.float64)
    cdef const double[:, ::1] wh = np.ascontiguousarray(wh_in, dtype=np.float64)
    cdef int B = xproj.shape[0], T = xproj.shape[1], H4 = xproj.shape[2]
    cdef int H = H4 // 4
    hs_a = np.zeros((B, T, H))
    cs_a = np.zeros((B, T, H))
    gates_a = np.zeros((B, T, H4))
    z_a = np.zeros((B, H4))
    zeros_a = np.zeros(max(H, 1))
    cdef double[:, :, ::1] hs = hs_a
    cdef double[:, :, ::1] cs = cs_a
    cdef double[:, :, ::1] gates = gates_a
    cdef double[:, ::1] z = z_a
    cdef double[::1] zeros = zeros_a
    cdef int b, t, j, lda
    cdef double one = 1.0
    if B == 0 or T == 0 or H == 0:
        return hs_a, cs_a, gates_a
    lda = T * H
    with nogil:
        for t in range(T):
            for b in range(B):
                for j in range(H4):
                    z[b, j] = xproj[b, t, j]
            if t > 0:
                # z += h_{t-1} @ wh ; h_{t-1} rows are strided by T*H
                dgemm(b"N", b"N", &H4, &B, &H, &one, &wh[0, 0], &H4,
                      &hs[0, t - 1, 0], &lda, &one, &z[0, 0], &H4)
            for b in range(B):
                lstm_cell_row(&z[b, 0], &cs[b, t - 1, 0] if t > 0 else &zeros[0], &gates[b, t, 0],
                          &cs[b, t, 0], &hs[b, t, 0], H)
    return hs_a, cs_a, gates_a


def lstm_backward(dhs_in, gates_in, cs_in, hs_in, wh_in):
    cdef const double[:, :, ::1] dhs = np.ascontiguousarray(dhs_in, dtype=np.float64)
    cdef const double[:, :, ::1] gates = np.ascontiguousarray(gates_in, dtype=np.float64)
    cdef const double[:, :, ::1] cs = np.ascontiguousarray(cs_in, dtype=np.float64)
    cdef const double[:, :, ::1] hs = np.ascontiguousarray(hs_in, dtype=np.float64)
    cdef const double[:, ::1] wh = np.ascontiguousarray(wh_in, dtype=np.float64)
    cdef int B = hs.shape[0], T = hs.shape[1], H = hs.shape[2]
    cdef int H4 = 4 * H
    dxproj_a = np.zeros((B, T, H4))
    dwh_a = np.zeros((H, H4))
    dh_next_a = np.zeros((B, H))
    dc_next_a = np.zeros((B, H))
    cdef double[:, :, ::1] dxproj = dxproj_a
    cdef double[:, ::1] dwh = dwh_a
    cdef double[:, ::1] dh_next = dh_next_a
    cdef double[:, ::1] dc_next = dc_next_a
    cdef int b, t, j, ldz, ldh
    cdef double one = 1.0, zero = 0.0
    cdef double iv, fv, gv, ov, cv, cprev, dh, tc, dc
    if B == 0 or T == 0 or H == 0:
        return dxproj_a, dwh_a
    ldz = T * H4
    ldh = T * H
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for j in range(H):
                    iv = gates[b, t, j]
                    fv = gates[b, t, H + j]
                    gv = gates[b, t, 2 * H + j]
                    ov = gates[b, t, 3 * H + j]
                    cv = cs[b, t, j]
                    cprev = cs[b, t - 1, j] if t > 0 else 0.0
                    dh = dhs[b, t, j] + dh_next[b, j]
                    tc = tanh(cv)
                    dc = dc_next[b, j] + dh * ov * (1.0 - tc * tc)
                    dxproj[b, t, j] = dc * gv * iv * (1.0 - iv)
                    dxproj[b, t, H + j] = dc * cprev * fv * (1.0 - fv)
                    dxproj[b, t, 2 * H + j] = dc * iv * (1.0 - gv * gv)
                    dxproj[b, t, 3 * H + j] = dh * tc * ov * (1.0 - ov)
                    dc_next[b, j] = dc * fv
            if t > 0:
                # dwh += h_{t-1}^T @ dz_t
                dgemm(b"N", b"T", &H4, &H, &B, &one, &dxproj[0, t, 0], &ldz,
                      &hs[0, t - 1, 0], &ldh, &one, &dwh[0, 0], &H4)
            # dh_next = dz_t @ wh^T
            dgemm(b"T", b"N", &H, &B, &H4, &one, &wh[0, 0], &H4,
                  &dxproj[0, t, 0], &ldz, &zero, &dh_next[0, 0], &H)
    return dxproj_a, dwh_a
