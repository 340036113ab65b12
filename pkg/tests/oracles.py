"""Independent slow reference implementations used by the tests."""

import math
from fractions import Fraction


def fps_brute(points, k, start=0):
    """O(k * m^2) greedy selection: recompute every candidate's min distance each round."""
    pts = [tuple(map(float, p)) for p in points]
    chosen = [start]
    while len(chosen) < k:
        best, best_d = None, -1.0
        for i, p in enumerate(pts):
            d = min(math.dist(p, pts[j]) for j in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return chosen


def _directed(a, b):
    """Per-point nearest distance, looping over b in the outer loop."""
    best = [math.inf] * len(a)
    for q in b:
        for i, p in enumerate(a):
            d = math.sqrt((p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1])
                          + (p[2] - q[2]) * (p[2] - q[2]))
            if d < best[i]:
                best[i] = d
    return best


def _exact_mean(xs):
    total = sum((Fraction(x) for x in xs), Fraction(0))
    return float(total) / len(xs)


def chamfer_naive(a, b):
    a, b = [tuple(map(float, p)) for p in a], [tuple(map(float, p)) for p in b]
    return 0.5 * (_exact_mean(_directed(a, b)) + _exact_mean(_directed(b, a)))


def hausdorff_naive(a, b):
    a, b = [tuple(map(float, p)) for p in a], [tuple(map(float, p)) for p in b]
    return max(max(_directed(a, b)), max(_directed(b, a)))
