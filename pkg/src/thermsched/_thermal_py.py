"""Pure-numpy fallback for the thermal stepping kernel (same contract as the compiled one)."""

from __future__ import annotations

import numpy as np


def advance(temps, powers, nbr, g_edge, t_amb, r_vert, r_lat, step_gain,
            noise, n_steps, t_th, dt):
    c = temps
    valid = nbr >= 0
    cols = [(np.where(valid[:, k], nbr[:, k], 0), valid[:, k]) for k in range(nbr.shape[1])]
    use_noise = noise.shape[0] > 0

    prev_peak = float(c.max())
    prev_margin = max(t_th - prev_peak, 0.0)
    int_margin = 0.0
    int_peak = 0.0
    for s in range(n_steps):
        lat = np.zeros_like(c)
        for idx, ok in cols:
            lat += np.where(ok, c - c[idx], 0.0)
        flow = powers - (c - t_amb) / r_vert - lat / r_lat - (c - t_amb) * g_edge
        if use_noise:
            nxt = c + step_gain * flow + noise[s]
        else:
            nxt = c + step_gain * flow
        c[:] = nxt
        peak = float(nxt.max())
        margin = max(t_th - peak, 0.0)
        int_margin += 0.5 * (prev_margin + margin) * dt
        int_peak += 0.5 * (prev_peak + peak) * dt
        prev_margin = margin
        prev_peak = peak
    return int_margin, int_peak, prev_peak
