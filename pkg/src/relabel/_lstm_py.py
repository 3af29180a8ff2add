"""Reference numpy implementation of the unidirectional LSTM recurrence.

Gate layout along the last axis is ``[input, forget, cell, output]``,
each of width H. Input projections (``x @ Wx + b``) are precomputed by the
caller, so these kernels only run the time recurrence.
"""
import numpy as np


def _sig(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def lstm_forward(xproj, wh):
    """xproj: (B, T, 4H), wh: (H, 4H) -> hs, cs, gates (activated), all float64."""
    xproj = np.ascontiguousarray(xproj, dtype=np.float64)
    wh = np.ascontiguousarray(wh, dtype=np.float64)
    B, T, H4 = xproj.shape
    H = H4 // 4
    hs = np.zeros((B, T, H))
    cs = np.zeros((B, T, H))
    gates = np.zeros((B, T, H4))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        z = xproj[:, t] + h @ wh
        i = _sig(z[:, :H])
        f = _sig(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sig(z[:, 3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[:, t, :H] = i
        gates[:, t, H:2 * H] = f
        gates[:, t, 2 * H:3 * H] = g
        gates[:, t, 3 * H:] = o
        hs[:, t] = h
        cs[:, t] = c
    return hs, cs, gates


def lstm_backward(dhs, gates, cs, hs, wh):
    """Backprop through time. Returns (dxproj (B,T,4H), dwh (H,4H))."""
    B, T, H = hs.shape
    dxproj = np.zeros((B, T, 4 * H))
    dwh = np.zeros((H, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        i = gates[:, t, :H]
        f = gates[:, t, H:2 * H]
        g = gates[:, t, 2 * H:3 * H]
        o = gates[:, t, 3 * H:]
        c = cs[:, t]
        c_prev = cs[:, t - 1] if t > 0 else np.zeros((B, H))
        h_prev = hs[:, t - 1] if t > 0 else np.zeros((B, H))
        dh = dhs[:, t] + dh_next
        tc = np.tanh(c)
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = dxproj[:, t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dwh += h_prev.T @ dz
        dh_next = dz @ wh.T
        dc_next = dc * f
    return dxproj, dwh
