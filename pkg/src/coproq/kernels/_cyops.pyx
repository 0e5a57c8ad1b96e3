# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: initializedcheck=False
"""Compiled kernels for the dueling Q-network hot path.

Same signatures and op order as numpy_ref; GEMMs go straight to BLAS and
the elementwise stages are fused C loops, so results agree with the numpy
twin to float64 rounding and Adam is arithmetically identical.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt
from scipy.linalg.cython_blas cimport dgemm

NAME = "cython"


cdef inline void _mm(const double[:, ::1] A, const double[:, ::1] B,
                     double[:, ::1] C, double beta) noexcept nogil:
    # row-major C[m, n] = A[m, k] @ B[k, n] + beta * C
    # const views: weight slices of a frozen target net are read-only
    cdef int m = A.shape[0], k = A.shape[1], n = B.shape[1]
    cdef double alpha = 1.0
    cdef char nt = b'N'
    if m == 0 or n == 0 or k == 0:
        return
    dgemm(&nt, &nt, &n, &m, &k, &alpha, <double*> &B[0, 0], &n,
          <double*> &A[0, 0], &k, &beta, &C[0, 0], &n)


cdef inline void _mm_tn(const double[:, ::1] A, const double[:, ::1] B,
                        double[:, ::1] C) noexcept nogil:
    # row-major C[k, n] = A[m, k].T @ B[m, n]
    cdef int m = A.shape[0], k = A.shape[1], n = B.shape[1]
    cdef double alpha = 1.0, beta = 0.0
    cdef char nt = b'N', tt = b'T'
    if m == 0 or n == 0 or k == 0:
        return
    dgemm(&nt, &tt, &n, &k, &m, &alpha, <double*> &B[0, 0], &n,
          <double*> &A[0, 0], &k, &beta, &C[0, 0], &n)


cdef inline void _mm_nt(const double[:, ::1] A, const double[:, ::1] B,
                        double[:, ::1] C, double beta) noexcept nogil:
    # row-major C[m, k] = A[m, n] @ B[k, n].T + beta * C
    cdef int m = A.shape[0], n = A.shape[1], k = B.shape[0]
    cdef double alpha = 1.0
    cdef char nt = b'N', tt = b'T'
    if m == 0 or n == 0 or k == 0:
        return
    dgemm(&tt, &nt, &k, &m, &n, &alpha, <double*> &B[0, 0], &n,
          <double*> &A[0, 0], &n, &beta, &C[0, 0], &k)


cdef inline void _bias_relu(double[:, ::1] H,
                            const double[::1] b) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double x
    for i in range(H.shape[0]):
        for j in range(H.shape[1]):
            x = H[i, j] + b[j]
            H[i, j] = x if x > 0.0 else 0.0


cdef inline void _bias_add(double[:, ::1] H,
                           const double[::1] b) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(H.shape[0]):
        for j in range(H.shape[1]):
            H[i, j] = H[i, j] + b[j]


cdef _layer(lay, cnp.ndarray p, str name):
    return lay.weight(p, name), lay.bias(p, name)


cdef _forward(lay, cnp.ndarray p, object X_in):
    cdef cnp.ndarray X = np.ascontiguousarray(X_in, dtype=np.float64)
    cdef Py_ssize_t B = X.shape[0]
    cdef int H = lay.hidden, A = lay.n_actions
    h0 = np.empty((B, H))
    h1 = np.empty((B, H))
    hv = np.empty((B, H))
    ha = np.empty((B, H))
    v = np.empty((B, 1))
    adv = np.empty((B, A))
    q = np.empty((B, A))

    w, b = _layer(lay, p, "t0")
    _mm(X, w, h0, 0.0)
    _bias_relu(h0, b)
    w, b = _layer(lay, p, "t1")
    _mm(h0, w, h1, 0.0)
    _bias_relu(h1, b)
    w, b = _layer(lay, p, "v0")
    _mm(h1, w, hv, 0.0)
    _bias_relu(hv, b)
    w, b = _layer(lay, p, "a0")
    _mm(h1, w, ha, 0.0)
    _bias_relu(ha, b)
    w, b = _layer(lay, p, "v1")
    _mm(hv, w, v, 0.0)
    _bias_add(v, b)
    w, b = _layer(lay, p, "a1")
    _mm(ha, w, adv, 0.0)
    _bias_add(adv, b)

    cdef double[:, ::1] qv = q, advv = adv, vv = v
    cdef Py_ssize_t i, j
    cdef double s
    with nogil:
        for i in range(B):
            s = 0.0
            for j in range(A):
                s += advv[i, j]
            s /= A
            for j in range(A):
                qv[i, j] = vv[i, 0] + advv[i, j] - s
    return q, (X, h0, h1, hv, ha)


def q_forward(lay, p, X):
    """Q-values [B, A] for a batch of observations [B, obs_dim]."""
    q, _ = _forward(lay, p, X)
    return q


def q_forward_cached(lay, p, X):
    """Forward keeping post-activation hiddens for q_backward."""
    return _forward(lay, p, X)


cdef inline void _mask_by(double[:, ::1] D,
                          const double[:, ::1] H) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(D.shape[0]):
        for j in range(D.shape[1]):
            if H[i, j] <= 0.0:
                D[i, j] = 0.0


cdef inline void _colsum(const double[:, ::1] D,
                         double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, j
    for j in range(D.shape[1]):
        out[j] = 0.0
    for i in range(D.shape[0]):
        for j in range(D.shape[1]):
            out[j] += D[i, j]


def q_backward(lay, p, cache, dQ_in):
    """Flat gradient of sum(dQ * Q) w.r.t. the parameter vector."""
    X, h0, h1, hv, ha = cache
    cdef cnp.ndarray g = np.zeros_like(p)
    cdef cnp.ndarray dQ = np.ascontiguousarray(dQ_in, dtype=np.float64)
    cdef Py_ssize_t B = dQ.shape[0]
    cdef int H = lay.hidden, A = lay.n_actions

    dv = np.empty((B, 1))
    dadv = np.empty((B, A))
    cdef const double[:, ::1] dQv = dQ
    cdef double[:, ::1] dvv = dv, dadvv = dadv
    cdef Py_ssize_t i, j
    cdef double s
    with nogil:
        for i in range(B):
            s = 0.0
            for j in range(A):
                s += dQv[i, j]
            dvv[i, 0] = s
            s /= A
            for j in range(A):
                dadvv[i, j] = dQv[i, j] - s

    dha = np.empty((B, H))
    dhv = np.empty((B, H))
    dh1 = np.empty((B, H))
    dh0 = np.empty((B, H))

    # advantage output layer
    w, b = _layer(lay, p, "a1")
    gw, gb = _layer(lay, g, "a1")
    _mm_tn(ha, dadv, gw)
    _colsum(dadv, gb)
    _mm_nt(dadv, w, dha, 0.0)
    _mask_by(dha, ha)

    w, b = _layer(lay, p, "a0")
    gw, gb = _layer(lay, g, "a0")
    _mm_tn(h1, dha, gw)
    _colsum(dha, gb)
    _mm_nt(dha, w, dh1, 0.0)

    # value output layer
    w, b = _layer(lay, p, "v1")
    gw, gb = _layer(lay, g, "v1")
    _mm_tn(hv, dv, gw)
    _colsum(dv, gb)
    _mm_nt(dv, w, dhv, 0.0)
    _mask_by(dhv, hv)

    w, b = _layer(lay, p, "v0")
    gw, gb = _layer(lay, g, "v0")
    _mm_tn(h1, dhv, gw)
    _colsum(dhv, gb)
    _mm_nt(dhv, w, dh1, 1.0)
    _mask_by(dh1, h1)

    # trunk
    w, b = _layer(lay, p, "t1")
    gw, gb = _layer(lay, g, "t1")
    _mm_tn(h0, dh1, gw)
    _colsum(dh1, gb)
    _mm_nt(dh1, w, dh0, 0.0)
    _mask_by(dh0, h0)

    w, b = _layer(lay, p, "t0")
    gw, gb = _layer(lay, g, "t0")
    _mm_tn(X, dh0, gw)
    _colsum(dh0, gb)
    return g


def adam_update(p, g, m, v, step, double alpha, double beta1,
                double beta2, double eps):
    """In-place Adam over flat vectors; `step` is the already-incremented
    t. Elementwise arithmetic matches the numpy twin bit for bit."""
    cdef double[::1] pv = p, mv = m, vv = v
    cdef const double[::1] gv = g
    cdef double bc1 = 1.0 - beta1 ** <double> step
    cdef double bc2 = 1.0 - beta2 ** <double> step
    cdef double om1 = 1.0 - beta1, om2 = 1.0 - beta2
    cdef Py_ssize_t i, n = pv.shape[0]
    with nogil:
        for i in range(n):
            mv[i] = mv[i] * beta1 + om1 * gv[i]
            vv[i] = vv[i] * beta2 + om2 * (gv[i] * gv[i])
            pv[i] = pv[i] - alpha * (mv[i] / bc1) / (sqrt(vv[i] / bc2)
                                                     + eps)
