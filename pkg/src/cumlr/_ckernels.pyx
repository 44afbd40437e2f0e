# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training kernels.

Same contract as ``_pykernels``; matrix products go through BLAS dgemm and
the minibatch loop of an epoch runs without the GIL.
"""

import numpy as np

from libc.stdint cimport int64_t as i64
from libc.math cimport exp, log, sqrt, pow, isfinite, INFINITY
from libc.stdlib cimport malloc, free
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemm

NAME = "cython"


cdef struct Net:
    int nlayers
    Py_ssize_t* sizes
    Py_ssize_t* offsets      # start of W_i in theta
    Py_ssize_t maxwidth


cdef int _net_init(Net* net, sizes) except -1:
    cdef int L = len(sizes) - 1
    cdef int i
    cdef Py_ssize_t off = 0
    net.nlayers = L
    net.sizes = <Py_ssize_t*> malloc((L + 1) * sizeof(Py_ssize_t))
    net.offsets = <Py_ssize_t*> malloc(L * sizeof(Py_ssize_t))
    if net.sizes == NULL or net.offsets == NULL:
        raise MemoryError()
    net.maxwidth = 0
    for i in range(L + 1):
        net.sizes[i] = sizes[i]
        if sizes[i] > net.maxwidth:
            net.maxwidth = sizes[i]
    for i in range(L):
        net.offsets[i] = off
        off += net.sizes[i] * net.sizes[i + 1] + net.sizes[i + 1]
    return 0


cdef void _net_free(Net* net) noexcept:
    free(net.sizes)
    free(net.offsets)


cdef Py_ssize_t _act_total(Net* net, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t tot = 0
    cdef int i
    for i in range(net.nlayers):
        tot += n * net.sizes[i + 1]
    return tot


cdef double* _forward(Net* net, double* theta, double* X, Py_ssize_t n,
                      double* acts) noexcept nogil:
    """Fill per-layer post-activations into ``acts``; return the logits."""
    cdef int i, L = net.nlayers
    cdef int ia, ib, inn
    cdef Py_ssize_t r, j, a, b
    cdef double one = 1.0
    cdef double* h = X
    cdef double* z = acts
    cdef double* w
    cdef double* bias
    for i in range(L):
        a = net.sizes[i]
        b = net.sizes[i + 1]
        w = theta + net.offsets[i]
        bias = w + a * b
        for r in range(n):
            for j in range(b):
                z[r * b + j] = bias[j]
        ia = <int> a
        ib = <int> b
        inn = <int> n
        # row-major Z(n,b) += H(n,a) W(b,a)^T
        dgemm(b"T", b"N", &ib, &inn, &ia, &one, w, &ia, h, &ia, &one, z, &ib)
        if i < L - 1:
            for r in range(n * b):
                if z[r] < 0.0:
                    z[r] = 0.0
        h = z
        z = z + n * b
    return h


cdef double _cross_entropy(double* z, Py_ssize_t n, Py_ssize_t c, i64* y,
                           double* delta, i64* correct) noexcept nogil:
    """Summed cross-entropy; writes (softmax - onehot)/n into delta if given."""
    cdef Py_ssize_t r, j, best
    cdef double mx, s, total = 0.0, inv_n = 1.0 / n
    cdef double* row
    correct[0] = 0
    for r in range(n):
        row = z + r * c
        mx = row[0]
        best = 0
        for j in range(c):
            if not isfinite(row[j]):
                return INFINITY
            if row[j] > mx:
                mx = row[j]
                best = j
        if best == y[r]:
            correct[0] += 1
        s = 0.0
        for j in range(c):
            s += exp(row[j] - mx)
        total += mx + log(s) - row[y[r]]
        if delta != NULL:
            for j in range(c):
                delta[r * c + j] = exp(row[j] - mx) / s
            delta[r * c + y[r]] -= 1.0
            for j in range(c):
                delta[r * c + j] *= inv_n
    if not isfinite(total):
        return INFINITY
    return total


cdef double _loss_grad(Net* net, double* theta, double* grad, double* X,
                       Py_ssize_t n, i64* y, double* acts, double* d0,
                       double* d1) noexcept nogil:
    cdef int i, L = net.nlayers
    cdef int ia, ib, inn
    cdef Py_ssize_t r, j, a, b
    cdef double one = 1.0, zero = 0.0
    cdef i64 correct
    cdef double* z
    cdef double* h
    cdef double* w
    cdef double* gw
    cdef double* gb
    cdef double* delta = d0
    cdef double* other = d1
    cdef double* tmp
    cdef double total
    cdef Py_ssize_t act_off
    z = _forward(net, theta, X, n, acts)
    total = _cross_entropy(z, n, net.sizes[L], y, delta, &correct)
    if not isfinite(total):
        return INFINITY
    # output of layer i starts at acts + n * sum(sizes[1..i])
    act_off = _act_total(net, n) - n * net.sizes[L]
    inn = <int> n
    for i in range(L - 1, -1, -1):
        a = net.sizes[i]
        b = net.sizes[i + 1]
        if i == 0:
            h = X
        else:
            act_off -= n * a
            h = acts + act_off
        w = theta + net.offsets[i]
        gw = grad + net.offsets[i]
        gb = gw + a * b
        ia = <int> a
        ib = <int> b
        # row-major gW(b,a) = delta(n,b)^T H(n,a)
        dgemm(b"N", b"T", &ia, &ib, &inn, &one, h, &ia, delta, &ib, &zero, gw, &ia)
        for j in range(b):
            gb[j] = 0.0
        for r in range(n):
            for j in range(b):
                gb[j] += delta[r * b + j]
        if i > 0:
            # row-major dH(n,a) = delta(n,b) W(b,a)
            dgemm(b"N", b"N", &ia, &inn, &ib, &one, w, &ia, delta, &ib, &zero, other, &ia)
            for r in range(n * a):
                if not (h[r] > 0.0):
                    other[r] = other[r] * 0.0
            tmp = delta
            delta = other
            other = tmp
    return total / n


cdef void _sgd(double* theta, double* grad, Py_ssize_t p, double lr) noexcept nogil:
    cdef Py_ssize_t k
    for k in range(p):
        theta[k] -= lr * grad[k]


cdef void _adam(double* theta, double* grad, double* m, double* v, Py_ssize_t p,
                double lr, double beta1, double beta2, double eps,
                i64 t) noexcept nogil:
    cdef Py_ssize_t k
    cdef double bc1 = 1.0 - pow(beta1, <double> t)
    cdef double bc2 = 1.0 - pow(beta2, <double> t)
    cdef double g
    for k in range(p):
        g = grad[k]
        m[k] = m[k] * beta1 + (1.0 - beta1) * g
        v[k] = v[k] * beta2 + (1.0 - beta2) * (g * g)
        theta[k] -= lr * (m[k] / bc1) / (sqrt(v[k] / bc2) + eps)


def _check(double[::1] theta, sizes):
    cdef Py_ssize_t need = 0, i
    for i in range(len(sizes) - 1):
        need += sizes[i] * sizes[i + 1] + sizes[i + 1]
    if theta.shape[0] != need:
        raise ValueError(f"flat parameter vector has {theta.shape[0]} entries, need {need}")


def loss_grad(double[::1] theta, double[::1] grad, sizes, const double[:, ::1] X,
              const i64[::1] y):
    """Mean cross-entropy on ``(X, y)``; gradient written into ``grad``."""
    _check(theta, sizes)
    _check(grad, sizes)
    cdef Net net
    _net_init(&net, sizes)
    cdef Py_ssize_t n = X.shape[0]
    cdef double* acts = <double*> malloc((_act_total(&net, n) + 2 * n * net.maxwidth) * sizeof(double))
    cdef double out
    if acts == NULL:
        _net_free(&net)
        raise MemoryError()
    with nogil:
        out = _loss_grad(&net, &theta[0], &grad[0], <double*> &X[0, 0], n,
                         <i64*> &y[0], acts, acts + _act_total(&net, n),
                         acts + _act_total(&net, n) + n * net.maxwidth)
    free(acts)
    _net_free(&net)
    return out


def eval_loss(double[::1] theta, sizes, const double[:, ::1] X, const i64[::1] y):
    """Return ``(mean_loss, correct_count)`` without computing gradients."""
    _check(theta, sizes)
    cdef Net net
    _net_init(&net, sizes)
    cdef Py_ssize_t n = X.shape[0]
    cdef double* acts = <double*> malloc(_act_total(&net, n) * sizeof(double))
    cdef double* z
    cdef double total
    cdef i64 correct = 0
    if acts == NULL:
        _net_free(&net)
        raise MemoryError()
    with nogil:
        z = _forward(&net, &theta[0], <double*> &X[0, 0], n, acts)
        total = _cross_entropy(z, n, net.sizes[net.nlayers], <i64*> &y[0], NULL, &correct)
    free(acts)
    _net_free(&net)
    if not isfinite(total):
        return float("inf"), int(correct)
    return total / n, int(correct)


def logits(double[::1] theta, sizes, const double[:, ::1] X):
    _check(theta, sizes)
    cdef Net net
    _net_init(&net, sizes)
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t c = net.sizes[net.nlayers]
    cdef Py_ssize_t tot = _act_total(&net, n)
    cdef double* acts = <double*> malloc(tot * sizeof(double))
    out = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double* z
    with nogil:
        z = _forward(&net, &theta[0], <double*> &X[0, 0], n, acts)
        memcpy(&o[0, 0], z, n * c * sizeof(double))
    free(acts)
    _net_free(&net)
    return out


def sgd_update(double[::1] theta, const double[::1] grad, double lr):
    with nogil:
        _sgd(&theta[0], <double*> &grad[0], theta.shape[0], lr)


def adam_update(double[::1] theta, const double[::1] grad, double[::1] m,
                double[::1] v, double lr, double beta1, double beta2,
                double eps, i64 t):
    with nogil:
        _adam(&theta[0], <double*> &grad[0], &m[0], &v[0], theta.shape[0],
              lr, beta1, beta2, eps, t)


def run_epoch(double[::1] theta, sizes, const double[:, ::1] X, const i64[::1] y,
              const i64[::1] perm, Py_ssize_t batch_size, double lr, bint use_adam,
              double[::1] m, double[::1] v, i64 t, double beta1, double beta2,
              double eps, double max_loss=INFINITY):
    """One pass over ``X[perm]`` in minibatches, updating ``theta`` in place.

    Returns ``(batch_losses, t)``; stops after the first loss that is
    non-finite or above ``max_loss``.
    """
    _check(theta, sizes)
    cdef Net net
    _net_init(&net, sizes)
    cdef Py_ssize_t n = perm.shape[0]
    cdef Py_ssize_t d = X.shape[1]
    cdef Py_ssize_t p = theta.shape[0]
    cdef Py_ssize_t nbatches = (n + batch_size - 1) // batch_size
    cdef Py_ssize_t tot = _act_total(&net, batch_size)
    cdef double* work = <double*> malloc(
        (tot + 2 * batch_size * net.maxwidth + batch_size * d + p) * sizeof(double))
    cdef i64* yb = <i64*> malloc(batch_size * sizeof(i64))
    if work == NULL or yb == NULL:
        free(work)
        free(yb)
        _net_free(&net)
        raise MemoryError()
    cdef double* d0 = work + tot
    cdef double* d1 = d0 + batch_size * net.maxwidth
    cdef double* xb = d1 + batch_size * net.maxwidth
    cdef double* grad = xb + batch_size * d
    losses = np.empty(nbatches, dtype=np.float64)
    cdef double[::1] L = losses
    cdef double* mp = &m[0] if use_adam else NULL
    cdef double* vp = &v[0] if use_adam else NULL
    cdef Py_ssize_t k, r, start, rows, done = 0
    cdef double loss
    with nogil:
        for k in range(nbatches):
            start = k * batch_size
            rows = batch_size if start + batch_size <= n else n - start
            for r in range(rows):
                memcpy(xb + r * d, &X[perm[start + r], 0], d * sizeof(double))
                yb[r] = y[perm[start + r]]
            loss = _loss_grad(&net, &theta[0], grad, xb, rows, yb, work, d0, d1)
            L[k] = loss
            done = k + 1
            if not (loss <= max_loss):
                break
            if use_adam:
                t += 1
                _adam(&theta[0], grad, mp, vp, p, lr, beta1, beta2, eps, t)
            else:
                _sgd(&theta[0], grad, p, lr)
    free(work)
    free(yb)
    _net_free(&net)
    return losses[:done].copy(), t
