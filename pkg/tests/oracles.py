"""Straight-line numpy recomputations used as independent oracles.

Nothing here touches the tape; every formula is written out explicitly so a
bug in the differentiable implementation cannot hide in a shared helper.
"""

import numpy as np


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def _relu(x):
    return np.maximum(x, 0.0)


def graph_term(x0, a_hat, ws):
    prop = x0
    for _ in ws:
        prop = a_hat @ prop
    out = prop
    for w in ws:
        out = out @ w
    return _relu(out)


def rgcn(h, x0, a_hat, w_h, w_x, b):
    return np.tanh(h @ w_h + graph_term(x0, a_hat, w_x) + b)


def lgcn(h, c, x0, a_hat, p):
    def gate(g):
        return graph_term(x0, a_hat, p[f"w_{g}"]) + h @ p[f"u_{g}"] + p[f"b_{g}"]

    f, i, o = _sig(gate("f")), _sig(gate("i")), _sig(gate("o"))
    g = np.tanh(gate("g"))
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


def gcn_rnn(h, x0, a_hat, w_g, w_h, w_x, b):
    x = _relu(a_hat @ x0 @ w_g)
    out = np.zeros_like(h)
    for j in range(h.shape[0]):
        out[j] = np.tanh(h[j] @ w_h + x[j] @ w_x + b[0])
    return out


def lstm(x, h, c, w, u, b):
    n = h.shape[-1]
    z = x @ w + h @ u + b
    i, f, g, o = _sig(z[..., :n]), _sig(z[..., n:2 * n]), np.tanh(z[..., 2 * n:3 * n]), _sig(z[..., 3 * n:])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


def gcn_lstm(h, c, x0, a_hat, w_g, w, u, b):
    x = _relu(a_hat @ x0 @ w_g)
    hs, cs = np.zeros_like(h), np.zeros_like(c)
    for j in range(h.shape[0]):
        hs[j], cs[j] = lstm(x[j], h[j], c[j], w, u, b[0])
    return hs, cs


def softmax(s):
    e = np.exp(s - np.max(s))
    return e / e.sum()


def dam(hs, w_node, w_time):
    """hs: list of 14 x n states."""
    H = np.stack(hs)  # T x 14 x n
    hbar = H.mean(axis=0)
    a_n = softmax(hbar @ w_node[:, 0])
    node = a_n @ hbar
    frames = H.mean(axis=1)  # T x n
    a_t = softmax(frames @ w_time[:, 0])
    time = a_t @ frames
    return np.concatenate([node, time]), a_n, a_t


def triplet_brute(x, labels, margin):
    """All (anchor, positive, negative) triples; per-anchor hardest pairs."""
    n = len(labels)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            d[i, j] = np.sqrt(np.sum((x[i] - x[j]) ** 2))
    total = 0.0
    for a in range(n):
        worst = None
        for p in range(n):
            if p == a or labels[p] != labels[a]:
                continue
            for q in range(n):
                if labels[q] == labels[a]:
                    continue
                v = d[a, p] - d[a, q] + margin
                worst = v if worst is None else max(worst, v)
        if worst is not None:
            total += max(worst, 0.0)
    return total
