# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled explicit-Euler stepping of the tile RC lattice.

Arithmetic order mirrors ``_thermal_py.advance`` term for term so the two
backends agree bit-for-bit (built with -ffp-contract=off).
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def advance(double[::1] temps, const double[::1] powers, const int[:, ::1] nbr,
            const double[::1] g_edge, double t_amb, double r_vert, double r_lat,
            double step_gain, const double[:, ::1] noise, Py_ssize_t n_steps,
            double t_th, double dt):
    cdef Py_ssize_t m_count = temps.shape[0]
    cdef Py_ssize_t s, m, k
    cdef int n
    cdef double lat, c, flow, peak, margin, prev_peak, prev_margin
    cdef double int_margin = 0.0
    cdef double int_peak = 0.0
    cdef bint use_noise = noise.shape[0] > 0
    cdef double[::1] nxt = np.empty(m_count, dtype=np.float64)

    prev_peak = temps[0]
    for m in range(1, m_count):
        if temps[m] > prev_peak:
            prev_peak = temps[m]
    prev_margin = t_th - prev_peak
    if prev_margin < 0.0:
        prev_margin = 0.0

    for s in range(n_steps):
        for m in range(m_count):
            c = temps[m]
            lat = 0.0
            for k in range(4):
                n = nbr[m, k]
                if n < 0:
                    break
                lat = lat + (c - temps[n])
            flow = powers[m] - (c - t_amb) / r_vert - lat / r_lat - (c - t_amb) * g_edge[m]
            if use_noise:
                nxt[m] = c + step_gain * flow + noise[s, m]
            else:
                nxt[m] = c + step_gain * flow
        peak = nxt[0]
        temps[0] = nxt[0]
        for m in range(1, m_count):
            temps[m] = nxt[m]
            if nxt[m] > peak:
                peak = nxt[m]
        margin = t_th - peak
        if margin < 0.0:
            margin = 0.0
        int_margin += 0.5 * (prev_margin + margin) * dt
        int_peak += 0.5 * (prev_peak + peak) * dt
        prev_margin = margin
        prev_peak = peak
    return int_margin, int_peak, prev_peak
