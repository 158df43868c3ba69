"""Pure-Python scalar-loop references, independent of the numpy code paths."""

import math


def mat(a):
    return [list(map(float, row)) for row in a]


def vec_mat(x, w, b=None):
    out = []
    for j in range(len(w[0])):
        s = 0.0 if b is None else float(b[j])
        for i in range(len(x)):
            s += x[i] * w[i][j]
        out.append(s)
    return out


def softmax_list(xs):
    m = max(xs)
    e = [math.exp(v - m) for v in xs]
    total = sum(e)
    return [v / total for v in e]


def attention(q, k, v):
    """softmax(q k^T / sqrt(d)) v over nested lists."""
    d = len(q[0])
    out = []
    weights = []
    for qi in q:
        scores = [sum(qi[t] * kj[t] for t in range(d)) / math.sqrt(d) for kj in k]
        w = softmax_list(scores)
        weights.append(w)
        out.append([sum(w[j] * v[j][c] for j in range(len(v))) for c in range(len(v[0]))])
    return out, weights


def multi_head_attention(x, wq, bq, wk, bk, wv, bv, wo, bo, heads):
    """Self-attention with per-head column slices of the projections."""
    x, wq, wk, wv, wo = mat(x), mat(wq), mat(wk), mat(wv), mat(wo)
    d = len(wq[0])
    d_k = d // heads
    q = [vec_mat(r, wq, bq) for r in x]
    k = [vec_mat(r, wk, bk) for r in x]
    v = [vec_mat(r, wv, bv) for r in x]
    concat = [[] for _ in x]
    for h in range(heads):
        cols = range(h * d_k, (h + 1) * d_k)
        qh = [[row[c] for c in cols] for row in q]
        kh = [[row[c] for c in cols] for row in k]
        vh = [[row[c] for c in cols] for row in v]
        oh, _ = attention(qh, kh, vh)
        for i, row in enumerate(oh):
            concat[i].extend(row)
    return [vec_mat(row, wo, bo) for row in concat]


def sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def lstm_cell(x, h, c, w_x, w_h, b):
    """Per-unit LSTM step with gate blocks ordered i, f, g, o."""
    n = len(h)
    z = []
    for j in range(4 * n):
        s = float(b[j])
        for i in range(len(x)):
            s += x[i] * w_x[i][j]
        for i in range(n):
            s += h[i] * w_h[i][j]
        z.append(s)
    h_new, c_new = [], []
    for u in range(n):
        i_g = sigmoid(z[u])
        f_g = sigmoid(z[n + u])
        g_g = math.tanh(z[2 * n + u])
        o_g = sigmoid(z[3 * n + u])
        cu = f_g * c[u] + i_g * g_g
        c_new.append(cu)
        h_new.append(o_g * math.tanh(cu))
    return h_new, c_new
