# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the fallback kernels.

Must produce byte-identical output: integer neighborhood sums, one float64
multiply, round-half-up via floor(x + 0.5). See _fallback.py for the
reference semantics.
"""

from libc.math cimport floor

import numpy as np

cimport numpy as cnp

cnp.import_array()

NAME = "native"


def blur_box(const cnp.uint8_t[:, :, ::1] padded, int kernel, double weight):
    cdef int k = kernel
    cdef int h = padded.shape[0] - (k - 1)
    cdef int w = padded.shape[1] - (k - 1)
    cdef int channels = padded.shape[2]
    out_arr = np.empty((h, w, channels), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] out = out_arr
    cdef Py_ssize_t y, x, c, dy, dx
    cdef long long total
    cdef double v
    for y in range(h):
        for x in range(w):
            for c in range(channels):
                total = 0
                for dy in range(k):
                    for dx in range(k):
                        total += padded[y + dy, x + dx, c]
                v = floor(total * weight + 0.5)
                if v < 0.0:
                    v = 0.0
                elif v > 255.0:
                    v = 255.0
                out[y, x, c] = <cnp.uint8_t> v
    return out_arr


def downscale_mean(const cnp.uint8_t[:, :, ::1] pixels, int divisor):
    cdef int d = divisor
    cdef int h2 = pixels.shape[0] // d
    cdef int w2 = pixels.shape[1] // d
    cdef int channels = pixels.shape[2]
    out_arr = np.empty((h2, w2, channels), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] out = out_arr
    cdef Py_ssize_t by, bx, c, dy, dx
    cdef long long total, d2 = <long long> d * d
    for by in range(h2):
        for bx in range(w2):
            for c in range(channels):
                total = 0
                for dy in range(d):
                    for dx in range(d):
                        total += pixels[by * d + dy, bx * d + dx, c]
                out[by, bx, c] = <cnp.uint8_t> ((2 * total + d2) // (2 * d2))
    return out_arr


def binarize_luma(const cnp.uint8_t[:, :, ::1] pixels, int threshold):
    cdef int h = pixels.shape[0]
    cdef int w = pixels.shape[1]
    out_arr = np.empty((h, w), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] out = out_arr
    cdef Py_ssize_t y, x
    cdef double luma
    for y in range(h):
        for x in range(w):
            luma = floor((pixels[y, x, 0] * 0.299 + pixels[y, x, 1] * 0.587) + pixels[y, x, 2] * 0.114 + 0.5)
            out[y, x] = 1 if luma >= threshold else 0
    return out_arr


def label4(const cnp.uint8_t[:, ::1] mask):
    """Two-pass union-find labeling, 4-connectivity."""
    cdef int h = mask.shape[0]
    cdef int w = mask.shape[1]
    labels_arr = np.zeros((h, w), dtype=np.int32)
    cdef cnp.int32_t[:, ::1] labels = labels_arr
    parent_arr = np.zeros(h * w // 2 + 2, dtype=np.int32)
    cdef cnp.int32_t[::1] parent = parent_arr
    cdef int next_label = 0
    cdef Py_ssize_t y, x
    cdef int left, up, a, b, root

    for y in range(h):
        for x in range(w):
            if mask[y, x] == 0:
                continue
            left = labels[y, x - 1] if x > 0 else 0
            up = labels[y - 1, x] if y > 0 else 0
            if left == 0 and up == 0:
                next_label += 1
                parent[next_label] = next_label
                labels[y, x] = next_label
            elif left != 0 and up == 0:
                labels[y, x] = left
            elif left == 0:
                labels[y, x] = up
            else:
                # union the two provisional labels
                a = left
                while parent[a] != a:
                    a = parent[a]
                b = up
                while parent[b] != b:
                    b = parent[b]
                root = a if a < b else b
                parent[a] = root
                parent[b] = root
                labels[y, x] = root

    # flatten the forest, then renumber roots in first-touch order
    remap_arr = np.zeros(next_label + 1, dtype=np.int32)
    cdef cnp.int32_t[::1] remap = remap_arr
    cdef int count = 0, lab
    for y in range(h):
        for x in range(w):
            lab = labels[y, x]
            if lab == 0:
                continue
            root = lab
            while parent[root] != root:
                root = parent[root]
            if remap[root] == 0:
                count += 1
                remap[root] = count
            labels[y, x] = remap[root]
    return labels_arr, count
