"""Pure numpy co-occurrence accumulation, used when the extension is not built."""
import numpy as np


def _shifted(arr, dx, dy, dt):
    nt, ny, nx = arr.shape
    src = (slice(max(0, -dt), nt - max(0, dt)),
           slice(max(0, -dy), ny - max(0, dy)),
           slice(max(0, -dx), nx - max(0, dx)))
    dst = (slice(max(0, dt), nt - max(0, -dt)),
           slice(max(0, dy), ny - max(0, -dy)),
           slice(max(0, dx), nx - max(0, -dx)))
    return arr[src], arr[dst]


def glcm_counts(levels_map, mask, levels, offsets):
    out = np.zeros((levels, levels), dtype=np.float64)
    m = np.asarray(mask).astype(bool)
    q = np.asarray(levels_map)
    for dx, dy, dt in np.asarray(offsets):
        m0, m1 = _shifted(m, dx, dy, dt)
        q0, q1 = _shifted(q, dx, dy, dt)
        both = m0 & m1
        a, b = q0[both], q1[both]
        np.add.at(out, (a, b), 1.0)
        np.add.at(out, (b, a), 1.0)
    return out
