"""Unscrambled Sobol sequence (Joe-Kuo direction numbers, first 32 dimensions).

Points are produced in Gray-code order.  The all-zero initial point is
skipped, so the first point returned is (0.5, ..., 0.5).
"""

from __future__ import annotations

import numpy as np

MAX_DIM = 32
_BITS = 32

# (primitive polynomial with leading and trailing terms, initial m_1..m_s)
_DIRECTION_TABLE = (
    (1, (1,)),
    (3, (1,)),
    (7, (1, 3)),
    (11, (1, 3, 1)),
    (13, (1, 1, 1)),
    (19, (1, 1, 3, 3)),
    (25, (1, 3, 5, 13)),
    (37, (1, 1, 5, 5, 17)),
    (41, (1, 1, 5, 5, 5)),
    (47, (1, 1, 7, 11, 19)),
    (55, (1, 1, 5, 1, 1)),
    (59, (1, 1, 1, 3, 11)),
    (61, (1, 3, 5, 5, 31)),
    (67, (1, 3, 3, 9, 7, 49)),
    (91, (1, 1, 1, 15, 21, 21)),
    (97, (1, 3, 1, 13, 27, 49)),
    (103, (1, 1, 1, 15, 7, 5)),
    (109, (1, 3, 1, 15, 13, 25)),
    (115, (1, 1, 5, 5, 19, 61)),
    (131, (1, 3, 7, 11, 23, 15, 103)),
    (137, (1, 3, 7, 13, 13, 15, 69)),
    (143, (1, 1, 3, 13, 7, 35, 63)),
    (145, (1, 3, 5, 9, 1, 25, 53)),
    (157, (1, 3, 1, 13, 9, 35, 107)),
    (167, (1, 3, 1, 5, 27, 61, 31)),
    (171, (1, 1, 5, 11, 19, 41, 61)),
    (185, (1, 3, 5, 3, 3, 13, 69)),
    (191, (1, 1, 7, 13, 1, 19, 1)),
    (193, (1, 3, 7, 5, 13, 19, 59)),
    (203, (1, 1, 3, 9, 25, 29, 41)),
    (211, (1, 3, 5, 13, 23, 1, 55)),
    (213, (1, 3, 7, 3, 13, 59, 17)),
)


class UnsupportedDimensionError(ValueError):
    pass


def _direction_numbers(dim_index: int) -> np.ndarray:
    """The ``_BITS`` direction integers v_1..v_B of one coordinate."""
    poly, m_init = _DIRECTION_TABLE[dim_index]
    s = poly.bit_length() - 1
    m = [1] * _BITS
    if s > 0:
        a = (poly >> 1) & ((1 << (s - 1)) - 1)
        m[:s] = m_init
        for k in range(s, _BITS):
            val = m[k - s] ^ (m[k - s] << s)
            for i in range(1, s):
                if (a >> (s - 1 - i)) & 1:
                    val ^= m[k - i] << i
            m[k] = val
    return np.array([m[k] << (_BITS - 1 - k) for k in range(_BITS)], dtype=np.uint64)


def sobol_unit(n: int, d: int) -> np.ndarray:
    """First ``n`` points (zero point skipped) in the unit cube [0, 1)^d."""
    if d < 1 or d > MAX_DIM:
        raise UnsupportedDimensionError(f"Sobol points are bundled for 1 <= d <= {MAX_DIM}, got {d}")
    if n >= 2**_BITS - 1:
        raise ValueError("too many points requested")
    idx = np.arange(1, n + 1, dtype=np.uint64)
    gray = idx ^ (idx >> np.uint64(1))
    out = np.empty((n, d))
    for j in range(d):
        v = _direction_numbers(j)
        x = np.zeros(n, dtype=np.uint64)
        for b in range(_BITS):
            bit = (gray >> np.uint64(b)) & np.uint64(1)
            x ^= bit * v[b]
        out[:, j] = x.astype(float) / 2.0**_BITS
    return out


def sobol_points(n: int, d: int, bounds=None) -> np.ndarray:
    """First ``n`` Sobol points scaled into an axis-aligned box.

    ``bounds`` is a (d, 2) array of ``[low, high]`` rows; the unit cube by
    default.
    """
    u = sobol_unit(n, d)
    if bounds is None:
        return u
    b = np.asarray(bounds, dtype=float).reshape(d, 2)
    return b[:, 0] + u * (b[:, 1] - b[:, 0])
