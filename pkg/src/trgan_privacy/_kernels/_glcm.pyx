# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled co-occurrence accumulation."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def glcm_counts(const int[:, :, ::1] levels_map, const unsigned char[:, :, ::1] mask,
                int levels, const int[:, ::1] offsets):
    """Symmetric co-occurrence counts over in-mask voxel pairs.

    ``offsets`` rows are (dx, dy, dt); arrays are indexed [t, y, x].
    """
    cdef Py_ssize_t nt = mask.shape[0], ny = mask.shape[1], nx = mask.shape[2]
    cdef Py_ssize_t k, t, y, x, t_lo, t_hi, y_lo, y_hi, x_lo, x_hi
    cdef int dx, dy, dt
    counts_arr = np.zeros((levels, levels), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] c = counts_arr
    for k in range(offsets.shape[0]):
        dx = offsets[k, 0]
        dy = offsets[k, 1]
        dt = offsets[k, 2]
        # source ranges for which the shifted voxel stays inside the grid
        t_lo = max(0, -dt); t_hi = min(nt, nt - dt)
        y_lo = max(0, -dy); y_hi = min(ny, ny - dy)
        x_lo = max(0, -dx); x_hi = min(nx, nx - dx)
        for t in range(t_lo, t_hi):
            for y in range(y_lo, y_hi):
                for x in range(x_lo, x_hi):
                    # branch-free: adds 0 for pairs leaving the mask
                    c[levels_map[t, y, x], levels_map[t + dt, y + dy, x + dx]] += \
                        mask[t, y, x] & mask[t + dt, y + dy, x + dx]
    counts = counts_arr.astype(np.float64)
    return counts + counts.T
