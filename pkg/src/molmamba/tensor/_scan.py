"""Compiled kernels for the selective scan and its gradient."""

import numba
import numpy as np


@numba.njit(cache=True)
def scan_forward(x, delta, a, b, c):
    length, width = x.shape
    n_state = a.shape[1]
    states = np.empty((length, width, n_state))
    y = np.zeros((length, width))
    h = np.zeros((width, n_state))
    for t in range(length):
        for d in range(width):
            dt = delta[t, d]
            dx = dt * x[t, d]
            acc = 0.0
            for n in range(n_state):
                v = np.exp(dt * a[d, n]) * h[d, n] + dx * b[t, n]
                h[d, n] = v
                states[t, d, n] = v
                acc += c[t, n] * v
            y[t, d] = acc
    return y, states


@numba.njit(cache=True)
def scan_backward(g, x, delta, a, b, c, states):
    length, width = x.shape
    n_state = a.shape[1]
    g_x = np.zeros((length, width))
    g_delta = np.zeros((length, width))
    g_a = np.zeros((width, n_state))
    g_b = np.zeros((length, n_state))
    g_c = np.zeros((length, n_state))
    carry = np.zeros((width, n_state))
    for t in range(length - 1, -1, -1):
        for d in range(width):
            dt = delta[t, d]
            xt = x[t, d]
            gy = g[t, d]
            g_bsum = 0.0
            g_dt = 0.0
            for n in range(n_state):
                h_now = states[t, d, n]
                g_c[t, n] += gy * h_now
                gh = gy * c[t, n] + carry[d, n]
                decay = np.exp(dt * a[d, n])
                h_prev = states[t - 1, d, n] if t > 0 else 0.0
                scaled = gh * h_prev * decay
                g_dt += scaled * a[d, n]
                g_a[d, n] += scaled * dt
                g_bsum += gh * b[t, n]
                g_b[t, n] += gh * dt * xt
                carry[d, n] = gh * decay
            g_delta[t, d] = g_dt + g_bsum * xt
            g_x[t, d] = g_bsum * dt
    return g_x, g_delta, g_a, g_b, g_c
