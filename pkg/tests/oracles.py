"""Independent reference implementations used as test oracles.

Nothing here imports the code under test's internals beyond plain data
containers, so agreement is meaningful.
"""
import itertools
import math
from collections import Counter

import numpy as np


def naive_forward(weights, biases, x, slope=0.01):
    """Loop-based MLP forward pass."""
    out = []
    for row in np.asarray(x, dtype=np.float64):
        a = list(row)
        for k, (W, b) in enumerate(zip(weights, biases)):
            z = []
            for j in range(W.shape[1]):
                acc = b[j]
                for i in range(W.shape[0]):
                    acc += a[i] * W[i, j]
                z.append(acc)
            if k < len(weights) - 1:
                z = [v if v > 0 else slope * v for v in z]
            a = z
        out.append(a)
    return np.array(out)


def central_difference(loss, params, step=1e-4):
    """Numerical gradient of ``loss()`` w.r.t. every array in ``params`` (mutated in place)."""
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + step
            up = loss()
            p[i] = old - step
            down = loss()
            p[i] = old
            g[i] = (up - down) / (2 * step)
        grads[name] = g
    return grads


def grad_agreement(analytic, numeric, rtol=1e-4, atol=1e-7):
    """Fraction of entries where the two gradients agree."""
    ok = total = 0
    for name in numeric:
        a, n = np.ravel(analytic[name]), np.ravel(numeric[name])
        diff = np.abs(a - n)
        scale = np.maximum(np.abs(a), np.abs(n))
        good = (diff <= atol) | (diff <= rtol * scale)
        ok += int(good.sum())
        total += good.size
    return ok / total


def quota(n, c, p):
    """Integer-only ceil(n * p / 100 / c) for rational p = num/den."""
    from fractions import Fraction
    p = Fraction(str(p))
    num, den = n * p.numerator, 100 * c * p.denominator
    return -(-num // den)


def tally_vote(labels, sims):
    """Brute force: enumerate every label and keep the lexicographic best."""
    best = None
    for c in sorted(set(labels)):
        count = sum(1 for lab in labels if lab == c)
        weight = sum(s for lab, s in zip(labels, sims) if lab == c)
        key = (count, weight, -c)
        if best is None or key > best[0]:
            best = (key, c, count / len(labels))
    return best[1], best[2]


def all_label_multisets(max_size, num_classes):
    for size in range(1, max_size + 1):
        yield from itertools.combinations_with_replacement(range(num_classes), size)


def count_correct(pred, truth):
    return sum(1 for a, b in zip(pred, truth) if a == b)


def gaussian_pdf(x, mean, var):
    return math.exp(-((x - mean) ** 2) / (2 * var)) / math.sqrt(2 * math.pi * var)


def counts_by_label(labels):
    return Counter(int(v) for v in labels)
