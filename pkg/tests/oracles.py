"""Independent nested-loop references for the graph and compare-aggregate maths.

Plain Python floats and lists throughout; nothing here touches the package's
tensor code.
"""

import math


def leaky(x, slope=0.2):
    return x if x > 0 else slope * x


def elu(x):
    return x if x > 0 else math.exp(x) - 1.0


def softmax(xs):
    top = max(xs)
    e = [math.exp(x - top) for x in xs]
    s = sum(e)
    return [v / s for v in e]


def matvec(W, v):
    return [sum(W[i][k] * v[k] for k in range(len(v))) for i in range(len(W))]


def gat_attention(z, a):
    """alpha[i][j] over a complete graph with self-loops."""
    D, width = len(z), len(z[0])
    alpha = []
    for i in range(D):
        scores = []
        for j in range(D):
            s = 0.0
            for k in range(width):
                s += a[k] * z[i][k] + a[width + k] * z[j][k]
            scores.append(leaky(s))
        alpha.append(softmax(scores))
    return alpha


def gat_first(h, Ws, As):
    D = len(h)
    out = [[] for _ in range(D)]
    alphas = []
    for W, a in zip(Ws, As):
        z = [matvec(W, h[i]) for i in range(D)]
        alpha = gat_attention(z, a)
        alphas.append(alpha)
        for i in range(D):
            agg = [sum(alpha[i][j] * z[j][k] for j in range(D)) for k in range(len(z[0]))]
            out[i].extend(elu(v) for v in agg)
    return out, alphas


def gat_second(hp, w_out, a_out):
    D = len(hp)
    z = [matvec(w_out, hp[i]) for i in range(D)]
    alpha = gat_attention(z, a_out)
    scores = [elu(sum(alpha[i][j] * z[j][0] for j in range(D))) for i in range(D)]
    return softmax(scores), alpha


def reference_prototypes(h, W):
    D, F = len(h), len(h[0])
    alpha = []
    for i in range(D):
        scores = []
        for j in range(D):
            s = 0.0
            for a in range(F):
                for b in range(F):
                    s += h[i][a] * W[a][b] * h[j][b]
            scores.append(s)
        alpha.append(softmax(scores))
    rp = [[sum(alpha[i][j] * h[j][k] for j in range(D)) for k in range(F)] for i in range(D)]
    return rp, alpha


def aggregate(history, ref, W):
    F = len(ref)
    scores = []
    for row in history:
        s = 0.0
        for a in range(F):
            for b in range(F):
                s += row[a] * W[a][b] * ref[b]
        scores.append(s)
    alpha = softmax(scores)
    ap = [sum(alpha[r] * history[r][k] for r in range(len(history))) for k in range(F)]
    return ap, alpha
