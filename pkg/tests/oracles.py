"""Independent reference implementations used as test oracles.

Written with plain loops and the math module so they share no code path
with the vectorised library functions they check.
"""
import math


def dist(p, q):
    return math.hypot(p[0] - q[0], p[1] - q[1])


def brute_metrics(pred, truth):
    """pred[k][a][t] = (x, y), truth[a][t] = (x, y).

    Returns per-agent (minADE, minFDE, min MSE, argmin-ADE) lists.
    """
    K, A, T = len(pred), len(truth), len(truth[0])
    out = []
    for a in range(A):
        best_ade, best_fde, best_mse, arg = math.inf, math.inf, math.inf, -1
        for k in range(K):
            ade = sum(dist(pred[k][a][t], truth[a][t]) for t in range(T)) / T
            fde = dist(pred[k][a][T - 1], truth[a][T - 1])
            mse = sum(dist(pred[k][a][t], truth[a][t]) ** 2 for t in range(T)) / T
            if ade < best_ade:
                best_ade, arg = ade, k
            best_fde = min(best_fde, fde)
            best_mse = min(best_mse, mse)
        out.append((best_ade, best_fde, best_mse, arg))
    return out


def softmax_normalized(js, temperature=1.0):
    lo, hi = min(js), max(js)
    z = [(j - lo) / (hi - lo) if hi > lo else 0.0 for j in js]
    w = [math.exp(-v / temperature) for v in z]
    s = sum(w)
    return [v / s for v in w]


def ols_line(ts, ys):
    n = len(ts)
    mt, my = sum(ts) / n, sum(ys) / n
    slope = sum((t - mt) * (y - my) for t, y in zip(ts, ys)) / sum((t - mt) ** 2 for t in ts)
    return my - slope * mt, slope
