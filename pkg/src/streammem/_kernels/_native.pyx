# Compiled twins of the kernels in pure.py. Arithmetic must stay aligned
# with the pure backend: same expression order, same rounding.

import numpy as np

cimport numpy as cnp
from libc.math cimport floor, sqrt, fabs

cnp.import_array()

BACKEND_NAME = "native"


def grayscale_from_rgb(rgb):
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] buf = np.ascontiguousarray(rgb, dtype=np.uint8)
    cdef Py_ssize_t n = buf.shape[0] // 3
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] out = np.empty(n, dtype=np.uint8)
    cdef Py_ssize_t i
    cdef double y
    for i in range(n):
        y = 0.299 * buf[3 * i] + 0.587 * buf[3 * i + 1] + 0.114 * buf[3 * i + 2] + 0.5
        y = floor(y)
        if y < 0:
            y = 0
        elif y > 255:
            y = 255
        out[i] = <unsigned char> y
    return out


def histogram_u8(pixels, int bins):
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] px = np.ascontiguousarray(pixels, dtype=np.uint8)
    cdef Py_ssize_t n = px.shape[0]
    cdef int width = 256 // bins
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts = np.zeros(bins, dtype=np.int64)
    cdef Py_ssize_t i
    for i in range(n):
        counts[px[i] // width] += 1
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(bins, dtype=np.float64)
    for i in range(bins):
        out[i] = counts[i] / <double> n
    return out


def pearson(a, b):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = av.shape[0]
    cdef Py_ssize_t i
    cdef double ma = 0.0, mb = 0.0
    for i in range(n):
        ma += av[i]
        mb += bv[i]
    ma /= n
    mb /= n
    cdef double va = 0.0, vb = 0.0, cov = 0.0, da, db
    for i in range(n):
        da = av[i] - ma
        db = bv[i] - mb
        va += da * da
        vb += db * db
        cov += da * db
    if va * vb == 0.0:
        for i in range(n):
            if fabs(av[i] - bv[i]) > 1e-12:
                return 0.0
        return 1.0
    return cov / sqrt(va * vb)
